import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from metastyle.harness import cli
from metastyle.harness.audit import audit
from metastyle.harness.config import ExperimentConfig
from metastyle.harness.report import RunReport, slug
from metastyle.tensorcore import FROZEN, STYLIZABLE, load_checkpoint

SMALL = {
    "views_per_step": 1,
    "augment": {"n_image_augs": 1},
    "pretrain": {"steps": 12},
    "reptile": {"T": 2, "M": 2, "K": 2},
    "mixing": {"iterations": 3},
    "adapt": {"steps": 3},
}


def write_config(d, **extra):
    d.mkdir(parents=True, exist_ok=True)
    raw = {**SMALL, "output_dir": "out", **extra}
    (d / "config.json").write_text(json.dumps(raw), encoding="utf-8")
    return d / "config.json"


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-faces -> pretrain -> meta-train -> mix-train on a tiny config."""
    d = tmp_path_factory.mktemp("pipe")
    cfg_path = write_config(d)
    for cmd in ("gen-faces", "pretrain", "meta-train", "mix-train"):
        assert run(cmd, "--config", cfg_path) == 0, cmd
    return d, cfg_path


# ------------------------------------------------------------- config

def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig.from_dict({"seed": 3, "reptile": {"T": 7}, "embedder": {"eval_seed": 5}})
    p = tmp_path / "c.json"
    cfg.save(p)
    back = ExperimentConfig.load(p)
    assert back.seed == 3 and back.reptile.T == 7 and back.embedder.eval_seed == 5
    assert json.loads(back.to_json())["schema_version"] == 1


@pytest.mark.parametrize("raw", [
    {"sed": 1},
    {"reptile": {"TT": 3}},
    {"reptile": {"T": 0}},
    {"embedder": {"eval_seed": 11}},
    {"schema_version": 9},
    {"loss": {"lambda_id": -1}},
    {"avatar": []},
    {"workers": 0},
])
def test_config_rejects_bad_input(raw):
    from metastyle.tensorcore import UsageError
    with pytest.raises(UsageError):
        ExperimentConfig.from_dict(raw)


def test_config_paths_resolve_against_file(tmp_path):
    p = write_config(tmp_path / "sub", data={"train_styles": "train.txt"})
    cfg = ExperimentConfig.load(p)
    assert cfg.out == tmp_path / "sub" / "out"
    assert cfg.data.train_path() == tmp_path / "sub" / "train.txt"


def test_report_roundtrip_and_slug(tmp_path):
    rep = RunReport("x", 0, {"a": 1})
    rep.add_check("v", 1.5, "rmse", split="train")
    rep.save(tmp_path / "r.json")
    back = RunReport.load(tmp_path / "r.json")
    assert back.to_json() == rep.to_json()
    assert slug("Van Gogh!") != slug("van gogh") and slug("Van Gogh!").startswith("van-gogh-")


# ---------------------------------------------------------------- CLI

def test_cli_exit_codes(tmp_path, capsys):
    assert run("show-config") == 0
    assert run("no-such-command") == 2
    assert run("render", "--checkpoint", tmp_path / "missing.ckpt", "--dest", tmp_path) == 2
    assert run("pretrain", "--config", tmp_path / "missing.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert run("show-config", "--config", bad) == 2
    assert run("render", "--checkpoint", bad, "--dest", tmp_path, "--yaws", "a,b") == 2


def test_cli_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "metastyle.harness.cli", "show-config"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["reptile"]["K"] == 10


def test_missing_inputs_exit_2(tmp_path):
    cfg = write_config(tmp_path)
    assert run("pretrain", "--config", cfg) == 2        # no faces yet
    assert run("meta-train", "--config", cfg) == 2      # no pretrained checkpoint
    assert run("compare-inits", "--config", cfg) == 2
    assert run("adapt", "--config", cfg, "--text", "x") == 2


def test_numeric_failure_exit_3(pipeline, tmp_path):
    d, _ = pipeline
    cfg = write_config(tmp_path, adapt={"steps": 2, "lr": 1e30})
    code = run("adapt", "--config", cfg, "--text", "Pop art", "--pretrained", d / "out" / "pretrained.ckpt",
               "--init", d / "out" / "pretrained.ckpt")
    assert code == 3


# ------------------------------------------------------------ gen-faces

def test_gen_faces(pipeline):
    d, _ = pipeline
    faces = d / "out" / "faces"
    pngs = sorted(faces.glob("face_*.png"))
    assert len(pngs) == 50
    images = np.load(faces / "images.npy")
    assert images.shape == (50, 3, 64, 64)
    index = json.loads((faces / "index.json").read_text())["records"]
    k = index.index([0, 2, 0])  # identity 0, yaw 0, neutral expression
    assert np.abs(images[k] - images[k][:, :, ::-1]).max() < 1e-6
    px = np.asarray(Image.open(faces / "face_i0_y2_e0.png"))
    assert px.shape == (64, 64, 3) and px.dtype == np.uint8


def test_gen_faces_repeatable(pipeline, tmp_path):
    d, _ = pipeline
    assert run("gen-faces", "--config", write_config(tmp_path)) == 0
    for f in (d / "out" / "faces").iterdir():
        if f.name != "timings.json" and f.name != "report.json":
            assert (tmp_path / "out" / "faces" / f.name).read_bytes() == f.read_bytes(), f.name


# ------------------------------------------------------------- pretrain

def test_pretrain_outputs(pipeline):
    d, _ = pipeline
    out = d / "out"
    params, meta = load_checkpoint(out / "pretrained.ckpt")
    assert meta["pretrain_step"] == 12 and len(meta["history"]) == 12
    rep = json.loads((out / "pretrain_report.json").read_text())
    assert rep["results"]["heldout_rmse"] > 0
    assert len((out / "pretrain_loss.csv").read_text().splitlines()) == 13


def test_pretrain_resume_continues_numbering(pipeline, tmp_path):
    d, _ = pipeline
    cfg = write_config(tmp_path, pretrain={"steps": 15}, data={"faces_dir": str(d / "out" / "faces")})
    assert run("pretrain", "--config", cfg, "--resume", d / "out" / "pretrained.ckpt") == 0
    _, meta = load_checkpoint(tmp_path / "out" / "pretrained.ckpt")
    _, base = load_checkpoint(d / "out" / "pretrained.ckpt")
    assert meta["pretrain_step"] == 15
    assert meta["history"][:12] == base["history"]


# ---------------------------------------------------------- meta / mix

def test_meta_and_mix_outputs(pipeline):
    d, _ = pipeline
    out = d / "out"
    pre, _ = load_checkpoint(out / "pretrained.ckpt")
    for name, rows in (("meta", 2), ("mix", 3)):
        ck, meta = load_checkpoint(out / f"{name}.ckpt")
        assert ck.digest(FROZEN) == pre.digest(FROZEN)
        assert ck.digest(STYLIZABLE) != pre.digest(STYLIZABLE)
        assert meta["kind"] == name and "dataset_hash" in meta
        lines = (out / f"{name}_train.csv").read_text().splitlines()
        assert lines[0] == "t,mean_inner_loss,styles" and len(lines) == rows + 1


# ---------------------------------------------------------------- adapt

def test_adapt_outputs_and_repeatability(pipeline, tmp_path):
    d, cfg = pipeline
    a, b = tmp_path / "a", tmp_path / "b"
    for dest in (a, b):
        assert run("adapt", "--config", cfg, "--text", "Watercolor painting", "--dest", dest) == 0
    assert len(list((a / "turntable").glob("*.png"))) == 7 * 3
    assert len((a / "trajectory.csv").read_text().splitlines()) == 1 + 4
    for f in ("stylized.ckpt", "trajectory.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    ra, rb = (json.loads((x / "report.json").read_text()) for x in (a, b))
    assert [c["value"] for c in ra["checks"]] == [c["value"] for c in rb["checks"]]
    for f in (a / "turntable").iterdir():
        assert (b / "turntable" / f.name).read_bytes() == f.read_bytes()


def test_adapt_zero_steps_matches_init_renders(pipeline, tmp_path):
    d, cfg = pipeline
    assert run("adapt", "--config", cfg, "--text", "Pop art", "--steps", 0, "--dest", tmp_path / "a") == 0
    assert run("render", "--config", cfg, "--checkpoint", d / "out" / "meta.ckpt", "--dest", tmp_path / "r",
               "--yaws=-0.6,0.6", "--expressions", "0,2") == 0
    same = {("yaw0_expr0", "render_y0_e0"), ("yaw6_expr2", "render_y1_e2")}
    for t, r in same:
        assert (tmp_path / "a" / "turntable" / f"{t}.png").read_bytes() == \
            (tmp_path / "r" / f"{r}.png").read_bytes()


def test_adapt_with_image_and_mix(pipeline, tmp_path):
    d, cfg = pipeline
    img = tmp_path / "style.png"
    Image.fromarray(np.random.default_rng(0).integers(0, 255, (40, 30, 3), dtype=np.uint8)).save(img)
    assert run("adapt", "--config", cfg, "--image", img, "--dest", tmp_path / "i") == 0
    assert run("adapt", "--config", cfg, "--image", img, "--text", "Pop art", "--mix-weight", 0.3,
               "--dest", tmp_path / "m") == 0
    rep = json.loads((tmp_path / "m" / "report.json").read_text())
    assert "w=0.3" in rep["results"]["style"]
    assert run("adapt", "--config", cfg, "--image", tmp_path / "nope.png") == 2
    assert run("adapt", "--config", cfg) == 2


# --------------------------------------------------------------- render

def test_render_counts_and_determinism(pipeline, tmp_path):
    d, cfg = pipeline
    ck = d / "out" / "meta.ckpt"
    for dest in ("r1", "r2"):
        assert run("render", "--config", cfg, "--checkpoint", ck, "--dest", tmp_path / dest,
                   "--yaws=-0.3,0,0.3", "--expressions", "0,4") == 0
    files = sorted(p.name for p in (tmp_path / "r1").iterdir())
    assert len(files) == 6 and "render_y2_e4.png" in files
    for f in files:
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
    assert run("render", "--config", cfg, "--checkpoint", ck, "--dest", tmp_path / "r3",
               "--expressions", "7") == 2


# -------------------------------------------------------- compare-inits

def test_compare_inits(pipeline, tmp_path):
    d, cfg = pipeline
    out = tmp_path / "cmp"
    assert run("compare-inits", "--config", cfg, "--out", out, "--limit", 2, "--seeds", "0",
               "--steps", 2, "--pretrained", d / "out" / "pretrained.ckpt",
               "--meta", d / "out" / "meta.ckpt", "--mix", d / "out" / "mix.ckpt") == 0
    lines = (out / "compare" / "curves.csv").read_text().splitlines()
    assert lines[0] == "init,step,mean_total" and len(lines) == 1 + 3 * 3
    summary = (out / "compare" / "summary.csv").read_text().splitlines()
    assert summary[0] == "init,step2" and len(summary) == 4
    assert len(list((out / "compare" / "styles").glob("*/*.csv"))) == 2 * 3


def test_compare_degenerate_inits_agree(pipeline, tmp_path):
    d, cfg = pipeline
    pre = d / "out" / "pretrained.ckpt"
    out = tmp_path / "deg"
    assert run("compare-inits", "--config", cfg, "--out", out, "--limit", 1, "--seeds", "0", "--steps", 1,
               "--pretrained", pre, "--meta", pre, "--mix", pre) == 0
    rows = [r.split(",") for r in (out / "compare" / "curves.csv").read_text().splitlines()[1:]]
    step0 = [float(r[2]) for r in rows if r[1] == "0"]
    assert max(step0) <= 1.05 * min(step0)


def test_compare_refuses_train_styles(pipeline, tmp_path):
    d, cfg = pipeline
    train = (d.parent / "train.txt")
    from metastyle.harness.config import DATA_DIR
    first = [ln for ln in (DATA_DIR / "train_styles.txt").read_text().splitlines() if not ln.startswith("#")][0]
    train.write_text(first + "\n", encoding="utf-8")
    assert run("compare-inits", "--config", cfg, "--styles", train, "--steps", 1, "--seeds", "0",
               "--out", tmp_path) == 2


# -------------------------------------------------------- eval-semantic

def test_eval_semantic(pipeline, tmp_path, capsys):
    d, cfg = pipeline
    pre = d / "out" / "pretrained.ckpt"
    assert run("eval-semantic", "--config", cfg, "--out", tmp_path, "--checkpoint", pre,
               "--original", pre, "--text", "Pop art") == 0
    res = json.loads(capsys.readouterr().out)
    assert res["original"] == res["stylized"] and res["delta"] == 0.0
    assert -1 <= res["original"]["mean"] <= 1
    assert run("eval-semantic", "--config", cfg, "--checkpoint", pre, "--text", "Pop art",
               "--eval-seed", 11) == 2


# ---------------------------------------------------------------- audit

@pytest.mark.parametrize("report", ["pretrain_report.json", "meta_train_report.json", "mix_train_report.json"])
def test_audit_recomputes_exactly(pipeline, report):
    d, _ = pipeline
    rows = audit(d / "out" / report, count=3)
    assert rows and all(r.ok for r in rows)


def test_audit_detects_tampering(pipeline, tmp_path):
    d, _ = pipeline
    rep = RunReport.load(d / "out" / "pretrain_report.json")
    rep.checks[0].value += 1e-9
    rep.save(tmp_path / "bad.json")
    assert run("audit", tmp_path / "bad.json", "--count", 5) == 3
    assert run("audit", d / "out" / "pretrain_report.json") == 0
