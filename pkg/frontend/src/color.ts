// Velocity color wheel: hue encodes the motion direction, saturation the
// speed (clamped at the encoder range). Occupancy renders as gray scale.
//
// Documented hue table at the eight compass points (heading measured
// counterclockwise from +x / east):
//
//   east        0 deg  -> hue   0  (red)
//   north-east 45 deg  -> hue  45
//   north      90 deg  -> hue  90
//   north-west 135 deg -> hue 135
//   west       180 deg -> hue 180  (cyan)
//   south-west 225 deg -> hue 225
//   south      270 deg -> hue 270
//   south-east 315 deg -> hue 315

export const SPEED_SATURATION_LIMIT = 20; // m/s, the encoder's default range

export function hueForHeading(headingRad: number): number {
  const deg = (headingRad * 180) / Math.PI;
  return ((deg % 360) + 360) % 360;
}

export function saturationForSpeed(speed: number, limit = SPEED_SATURATION_LIMIT): number {
  const s = Math.min(Math.abs(speed), limit) / limit;
  return Math.round(s * 100);
}

export function velocityColor(
  vx: number,
  vy: number,
  limit = SPEED_SATURATION_LIMIT,
): string {
  const speed = Math.hypot(vx, vy);
  if (speed < 1e-9) return "hsl(0, 0%, 50%)";
  const hue = hueForHeading(Math.atan2(vy, vx));
  return `hsl(${hue.toFixed(0)}, ${saturationForSpeed(speed, limit)}%, 50%)`;
}

export function occupancyGray(occ: number): number {
  // free = white, unknown = mid gray, occupied = black
  const clamped = Math.max(0, Math.min(1, occ));
  return Math.round((1 - clamped) * 255);
}

export function reviewColor(review: string): string {
  switch (review) {
    case "accepted":
      return "#27ae60";
    case "rejected":
      return "#e74c3c";
    case "flipped":
      return "#e67e22";
    default:
      return "#f1c40f"; // auto, pending review
  }
}

/** HSL to packed RGB for direct ImageData writes. */
export function hslToRgb(h: number, s: number, l: number): [number, number, number] {
  const sn = s / 100;
  const ln = l / 100;
  const c = (1 - Math.abs(2 * ln - 1)) * sn;
  const hp = (((h % 360) + 360) % 360) / 60;
  const x = c * (1 - Math.abs((hp % 2) - 1));
  let rgb: [number, number, number];
  if (hp < 1) rgb = [c, x, 0];
  else if (hp < 2) rgb = [x, c, 0];
  else if (hp < 3) rgb = [0, c, x];
  else if (hp < 4) rgb = [0, x, c];
  else if (hp < 5) rgb = [x, 0, c];
  else rgb = [c, 0, x];
  const m = ln - c / 2;
  return [
    Math.round((rgb[0] + m) * 255),
    Math.round((rgb[1] + m) * 255),
    Math.round((rgb[2] + m) * 255),
  ];
}
