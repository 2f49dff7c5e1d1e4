import json
import time

import pytest
import yaml

from gridmotion.cli import main

# desk-scale geometry for the end-to-end acceptance pipeline: a 32 m world on
# a 192-cell grid, so the coarsest network keeps a 6x6 internal score map
PIPELINE_CONFIG = {
    "grid": {"side_cells": 192, "cell_size": 0.167},
    "labeling": {"min_gap": 10},
    "train": {
        "arch": "TOY-32s",
        "iterations": 5000,
        "base_lr": 3.0e-4,
        "lr_policy": "step",
        "c_dynamic": 40.0,
        "eval_interval": 500,
        "weight_decay": 0.0005,
    },
}


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """simulate -> encode -> train 5k iters -> eval, on the clutter-heavy suite.

    Shared by the directional-reproduction, rotation-sweep and SSL criteria.
    """
    root = tmp_path_factory.mktemp("pipeline")
    cfg_path = root / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(PIPELINE_CONFIG))
    t0 = time.time()
    assert main(["--config", str(cfg_path), "--seed", "5", "simulate",
                 "--scenario", "clutter_lot", "--frames", "240",
                 "--out", str(root / "simA")]) == 0
    assert main(["--config", str(cfg_path), "--seed", "6", "simulate",
                 "--scenario", "multi_lane", "--frames", "240",
                 "--out", str(root / "simB")]) == 0
    assert main(["--config", str(cfg_path), "encode",
                 "--sim", str(root / "simA"), str(root / "simB"),
                 "--out", str(root / "data"), "--min-gap", "10"]) == 0
    assert main(["--config", str(cfg_path), "train", "--data", str(root / "data"),
                 "--out", str(root / "run")]) == 0
    assert main(["--config", str(cfg_path), "eval", "--data", str(root / "data"),
                 "--net", str(root / "run" / "net.ckpt"),
                 "--out", str(root / "eval"), "--split", "test"]) == 0
    elapsed = time.time() - t0
    report = json.loads((root / "eval" / "report.json").read_text())
    return {"root": root, "config": cfg_path, "report": report,
            "elapsed": elapsed}
