import json
import subprocess
import sys
from fractions import Fraction

import pytest

from distseg.cli import main
from distseg.formats import ground_truth_to_json, samples_to_json, write_json
from distseg.masks import BinaryMask
from distseg.model import GroundTruthImage, Hypothesis, Instance, SampleSet

from helpers import rect

SPEC = {"merge_pairs": 1, "boundary_offsets": {"-1": 0.5, "1": 0.5}, "min_objects": 3, "max_objects": 4}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", "--spec", str(root / "spec.json"), "--k", "20", "--seed", "3", "--scenes", "4", "--out-dir", str(root / "d")]) == 0
    return root


def run(*argv) -> int:
    return main([str(a) for a in argv])


def test_synth_outputs(corpus):
    d = corpus / "d"
    mixture = json.loads((d / "mixture.json").read_text())
    assert len(mixture["scenes"]) == 4
    for sc in mixture["scenes"]:
        assert sum(Fraction(w) for w in sc["weights"]) == 1
    samples = json.loads((d / "samples.json").read_text())
    assert all(len(r["samples"]) == 20 and "mode" in r for r in samples)
    gt = json.loads((d / "gt.json").read_text())
    assert [i["id"] for i in gt["images"]] == [r["image_id"] for r in samples]


def test_every_command_is_byte_reproducible(corpus, tmp_path, capsys):
    d = corpus / "d"
    outputs = []
    for rep in ("a", "b"):
        o = tmp_path / rep
        assert run("confmask", "--samples", d / "samples.json", "--p", 0.75, "--out", o / "cm.json") == 0
        assert run("union-nms", "--samples", d / "samples.json", "--out", o / "un.json") == 0
        assert run("mode", "--samples", d / "samples.json", "--out", o / "mode.json") == 0
        assert run("eval", "--gt", d / "gt.json", "--pred", o / "un.json", "--report", o / "ev", "--svg") == 0
        assert run("picksim", "--gt", d / "gt.json", "--pred", o / "cm.json", o / "mode.json", "--probes", 4000, "--seed", 5, "--report", o / "pk", "--svg") == 0
        assert run("calibrate", "--gt", d / "gt.json", "--pred", o / "cm.json", o / "un.json", "--report", o / "cal", "--svg") == 0
        assert run("synth", "--spec", corpus / "spec.json", "--k", 5, "--seed", 11, "--out-dir", o / "syn") == 0
        assert run("verify-guarantee", "--spec", corpus / "spec.json", "--k", 20, "--p", 0.75, "--trials", 3, "--seed", 2, "--report", o / "vg") == 0
        outputs.append({p.relative_to(o): p.read_bytes() for p in sorted(o.rglob("*")) if p.is_file()})
        outputs[-1]["stdout"] = capsys.readouterr().out.encode()
    assert outputs[0].keys() == outputs[1].keys()
    assert len(outputs[0]) == 19
    for name in outputs[0]:
        assert outputs[0][name] == outputs[1][name], name


def test_jobs_do_not_change_output(corpus, tmp_path):
    d = corpus / "d"
    assert run("confmask", "--samples", d / "samples.json", "--p", 0.9, "--out", tmp_path / "one.json") == 0
    assert run("confmask", "--samples", d / "samples.json", "--p", 0.9, "--out", tmp_path / "two.json", "--jobs", 2) == 0
    assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()


def test_eval_on_ground_truth_is_perfect(corpus, tmp_path, capsys):
    gt = json.loads((corpus / "d" / "gt.json").read_text())
    preds = [{"image_id": a["image_id"], "category_id": a["category_id"], "score": 1.0, "segmentation": a["segmentation"]} for a in gt["annotations"]]
    (tmp_path / "p.json").write_text(json.dumps(preds))
    assert run("eval", "--gt", corpus / "d" / "gt.json", "--pred", tmp_path / "p.json", "--report", tmp_path / "r") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["summary"]["mAP"] == 1.0
    assert report["summary"]["MR@HP"] == 1.0
    csv_head = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert csv_head == "record,name,category,overlap,threshold,cutoff,precision,recall,value"
    assert json.loads(capsys.readouterr().out)["mAP"] == 1.0


def test_confmask_unanimous_samples(tmp_path):
    masks = [rect(10, 10, 0, 0, 3, 3), rect(10, 10, 5, 5, 9, 9)]
    hyp = Hypothesis(tuple(Instance(m, 1, 0.9) for m in masks))
    write_json(tmp_path / "s.json", samples_to_json([SampleSet(1, 10, 10, (hyp,) * 5)]))
    assert run("confmask", "--samples", tmp_path / "s.json", "--p", 1.0, "--out", tmp_path / "o.json") == 0
    out = json.loads((tmp_path / "o.json").read_text())
    assert [BinaryMask.from_rle(r["segmentation"]) for r in out] == masks
    assert all(r["p"] == 1.0 and len(r["support"]) == 5 for r in out)


def test_mode_missing_is_validation_failure(tmp_path, capsys):
    hyp = Hypothesis((Instance(rect(6, 6, 0, 0, 1, 1)),))
    write_json(tmp_path / "s.json", samples_to_json([SampleSet(1, 6, 6, (hyp,))]))
    assert run("mode", "--samples", tmp_path / "s.json", "--out", tmp_path / "o.json") == 1
    assert "no mode hypothesis" in capsys.readouterr().err


def test_validation_failure_exit_code(tmp_path, capsys):
    write_json(tmp_path / "gt.json", ground_truth_to_json([GroundTruthImage(1, 6, 6, (Instance(rect(6, 6, 0, 0, 1, 1)),))]))
    bad = [{"image_id": 42, "category_id": 1, "score": 0.5, "segmentation": rect(6, 6, 0, 0, 1, 1).to_rle()}]
    (tmp_path / "p.json").write_text(json.dumps(bad))
    assert run("eval", "--gt", tmp_path / "gt.json", "--pred", tmp_path / "p.json", "--report", tmp_path / "r") == 1
    assert "image_id 42" in capsys.readouterr().err


@pytest.mark.parametrize(
    "content",
    ["{oops", json.dumps({"images": "no"}), json.dumps({"images": [{"id": 1, "width": 4, "height": 4}], "annotations": [{"id": 3, "image_id": 1, "category_id": 1, "segmentation": {"size": [4, 4], "counts": [1, 2]}}]})],
)
def test_schema_and_io_exit_codes(tmp_path, content, capsys):
    (tmp_path / "gt.json").write_text(content)
    assert run("picksim", "--gt", tmp_path / "gt.json", "--pred", tmp_path / "gt.json") == 2
    assert run("picksim", "--gt", tmp_path / "missing.json", "--pred", tmp_path / "gt.json") == 2
    assert capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [["confmask", "--bogus"], ["confmask", "--samples", "x", "--p", "1.5", "--out", "y"], ["eval", "--gt", "g", "--pred", "p"], ["nope"], ["picksim", "--gt", "g", "--pred", "p", "--svg"]],
)
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_verify_guarantee_failure_exits_1(corpus, capsys):
    # an unattainable slack-free bound on a tiny run still reports rather than crashing
    code = run("verify-guarantee", "--spec", corpus / "spec.json", "--k", 10, "--p", 0.5, "--trials", 2, "--seed", 0, "--slack", 0)
    doc = json.loads(capsys.readouterr().out)
    assert code == (0 if doc["passed"] else 1)
    assert doc["threshold"] == 0.5


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "distseg", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "verify-guarantee" in proc.stdout
