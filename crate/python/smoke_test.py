#!/usr/bin/env python3
"""Smoke test for the exprspot_python extension module.

Builds nothing itself: it expects the cdylib to exist already, built with

    cargo build -p exprspot-python --release --features extension-module

and stages it under a temp directory with the importable module name.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def stage_module(tmp: Path) -> None:
    names = ["libexprspot_python.so", "libexprspot_python.dylib", "exprspot_python.dll"]
    for profile in ("release", "debug"):
        for name in names:
            cand = ROOT / "target" / profile / name
            if cand.exists():
                suffix = ".so" if name.endswith((".so", ".dylib")) else ".pyd"
                shutil.copy2(cand, tmp / f"exprspot_python{suffix}")
                return
    sys.exit(
        "extension module not found; run "
        "`cargo build -p exprspot-python --release --features extension-module` first"
    )


def main() -> None:
    checks = 0

    def ok(name: str, cond: bool) -> None:
        nonlocal checks
        if not cond:
            sys.exit(f"FAIL {name}")
        checks += 1
        print(f"PASS {name}")

    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = Path(tmpdir)
        stage_module(tmp)
        sys.path.insert(0, str(tmp))
        import exprspot_python as xp

        # LCN: constant image maps to zeros; affine invariance holds
        n = 32
        flat = [0.6] * (n * n)
        ok("lcn constant -> zeros", all(v == 0.0 for v in xp.lcn_normalize(flat, n, n)))
        img = [0.2 + 0.6 * ((i * 37 % 97) / 96.0) for i in range(n * n)]
        base = xp.lcn_normalize(img, n, n)
        shifted = xp.lcn_normalize([2.0 * v + 0.1 for v in img], n, n)
        ok(
            "lcn affine invariance",
            max(abs(a - b) for a, b in zip(base, shifted)) < 1e-6,
        )

        # ROC / Youden
        scores = [0.1, 0.3, 0.7, 0.9]
        labels = [False, False, True, True]
        ok("roc_auc separable", xp.roc_auc(scores, labels) == 1.0)
        ok("youden lower edge", xp.youden_threshold(scores, labels) == 0.7)

        # filters
        const = [0.42] * 100
        smoothed = xp.butterworth_smooth(const, 2, 0.05, True)
        ok("butterworth dc", max(abs(v - 0.42) for v in smoothed) < 1e-6)
        cubic = [0.3 - 0.02 * t + 4e-4 * t * t for t in range(80)]
        sg = xp.savgol_smooth(cubic, 11, 3)
        ok(
            "savgol polynomial exactness",
            max(abs(a - b) for a, b in zip(sg[6:-6], cubic[6:-6])) < 1e-9,
        )
        ok("minmax", xp.minmax_normalize([0.2, 0.6, 1.0])[1] == 0.5)

        # intervals
        mask = [0.0] * 10
        for t in range(3, 8):
            mask[t] = 1.0
        ok("extract intervals", xp.extract_intervals(mask, 0.5) == [(3, 7)])
        ok("merge intervals", xp.merge_intervals([(1, 5), (8, 10)], 3) == [(1, 10)])
        tp, fp, fn = xp.iou_match_counts([(10, 20)], [(15, 25)], 0.5)
        ok("iou worked case", (tp, fp, fn) == (0, 1, 1))

        # synthetic data + dataset ops
        data_dir = tmp / "data"
        manifest = xp.generate_synthetic(str(data_dir), 2, 1, 160, 30.0, 48, 7)
        summary = xp.manifest_summary(manifest)
        ok("synthetic manifest", summary["subjects"] == 2 and summary["videos"] == 2)
        ok("kth skip positive", xp.compute_kth_skip(manifest, "ME") >= 1)
        ratio = xp.move_to_neutral_ratio(manifest, "s01")
        ok("move-to-neutral finite", 0.0 < ratio < 10.0)
        splits = xp.loso_splits(manifest)
        ok("loso partition", len(splits) == 2 and splits[0][0] not in splits[0][1])

        # model surface: forward, checkpoint round trip, prediction
        net = xp.SpotterNet(seed=5, input_size=48, use_lcn=True)
        ok("parameter count sane", 1_000 < net.parameter_count() < 1_000_000)
        a = [((i * 13) % 50) / 50.0 for i in range(48 * 48)]
        b = [((i * 7) % 50) / 50.0 for i in range(48 * 48)]
        me, mae = net.forward_window(a, b, b, train=True)
        ok("forward in (0,1)", 0.0 < me < 1.0 and 0.0 < mae < 1.0)
        ckpt = tmp / "net.ckpt"
        net.save_checkpoint(ckpt)
        net2 = xp.SpotterNet(seed=99, input_size=48, use_lcn=True)
        net2.load_checkpoint(ckpt)
        me2, mae2 = net2.forward_window(a, b, b, train=False)
        ok("checkpoint forward finite", math.isfinite(me2) and math.isfinite(mae2))
        preds = net2.predict_video(manifest, "s01_v01", 4, 18)
        ok("predict length", len(preds) == 160)
        ok("predict range", all(0.0 < p < 1.0 and 0.0 < q < 1.0 for p, q in preds))

        # gradient audit (per-layer finite differences)
        ok("gradient audit", xp.gradient_audit_max_error(3) < 1e-4)

    print(f"smoke test: {checks} checks passed")


if __name__ == "__main__":
    main()
