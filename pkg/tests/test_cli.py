import json
import subprocess
import sys

import pytest

from cbirkit.evaluation import format_ground_truth
from cbirkit.feature_io import write_feature_map_file
from cbirkit.synthetic import ClusterSpec, make_cluster_sets


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "cbirkit.cli", *map(str, args)],
        capture_output=True, text=True, cwd=cwd,
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """FMAP directory + labels for a small clustered dataset."""
    root = tmp_path_factory.mktemp("cli")
    fmap_dir = root / "fmaps"
    fmap_dir.mkdir()
    sets, labels = make_cluster_sets(ClusterSpec(n_classes=4, images_per_class=3, seed=9))
    for fmap_set in sets:
        write_feature_map_file(fmap_dir / f"{fmap_set.image_id}.fmap", fmap_set)
    (root / "labels.tsv").write_text(format_ground_truth(labels))
    return root


def leftover_temp_files(directory):
    return [p for p in directory.iterdir() if p.suffix == ".tmp"]


@pytest.fixture(scope="module")
def desc_file(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("desc") / "all.desc"
    assert run_cli("extract", "--fmaps", workspace / "fmaps", "--out", out).returncode == 0
    return out


@pytest.fixture(scope="module")
def index_file(workspace, tmp_path_factory):
    root = tmp_path_factory.mktemp("query")
    desc = root / "all.desc"
    indx = root / "all.indx"
    assert run_cli("extract", "--fmaps", workspace / "fmaps", "--out", desc).returncode == 0
    assert run_cli("index", "--desc", desc, "--labels", workspace / "labels.tsv",
                   "--mode", "exemplar", "--out", indx).returncode == 0
    return indx


class TestExtract:
    def test_extract_writes_desc(self, workspace, tmp_path):
        out = tmp_path / "all.desc"
        proc = run_cli("extract", "--fmaps", workspace / "fmaps", "--out", out)
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
        assert out.read_bytes()[:4] == b"DESC"

    def test_idempotent_output(self, workspace, tmp_path):
        a, b = tmp_path / "a.desc", tmp_path / "b.desc"
        assert run_cli("extract", "--fmaps", workspace / "fmaps", "--out", a).returncode == 0
        assert run_cli("extract", "--fmaps", workspace / "fmaps",
                       "--out", b, "--jobs", 4).returncode == 0
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt_fmap_exits_2_names_file_no_partial(self, workspace, tmp_path):
        bad_dir = tmp_path / "bad"
        bad_dir.mkdir()
        src = sorted((workspace / "fmaps").iterdir())[0]
        (bad_dir / src.name).write_bytes(src.read_bytes())
        (bad_dir / "broken.fmap").write_bytes(b"FMAPxx-not-really")
        out = tmp_path / "bad.desc"
        proc = run_cli("extract", "--fmaps", bad_dir, "--out", out)
        assert proc.returncode == 2
        assert "broken.fmap" in proc.stderr
        assert not out.exists()
        assert leftover_temp_files(tmp_path) == []

    def test_bad_config_exits_3(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        proc = run_cli("extract", "--fmaps", workspace / "fmaps",
                       "--config", cfg, "--out", tmp_path / "x.desc")
        assert proc.returncode == 3
        assert not (tmp_path / "x.desc").exists()

    def test_unknown_branch_kind_exits_3(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"fusion": {"branches": [{"kind": "GEM"}]}}))
        proc = run_cli("extract", "--fmaps", workspace / "fmaps",
                       "--config", cfg, "--out", tmp_path / "x.desc")
        assert proc.returncode == 3


class TestIndex:
    def test_build_and_reload(self, workspace, desc_file, tmp_path):
        out = tmp_path / "all.indx"
        proc = run_cli("index", "--desc", desc_file, "--labels",
                       workspace / "labels.tsv", "--mode", "mean", "--out", out)
        assert proc.returncode == 0, proc.stderr
        assert out.read_bytes()[:4] == b"INDX"
        assert "4 classes" in proc.stderr

    def test_unlabeled_image_exits_4(self, workspace, desc_file, tmp_path):
        labels = tmp_path / "partial.tsv"
        lines = (workspace / "labels.tsv").read_text().splitlines()[:-1]
        labels.write_text("\n".join(lines) + "\n")
        out = tmp_path / "x.indx"
        proc = run_cli("index", "--desc", desc_file, "--labels", labels, "--out", out)
        assert proc.returncode == 4
        assert not out.exists()

    def test_empty_labels_exits_4(self, workspace, desc_file, tmp_path):
        labels = tmp_path / "empty.tsv"
        labels.write_text("")
        proc = run_cli("index", "--desc", desc_file, "--labels", labels,
                       "--out", tmp_path / "y.indx")
        assert proc.returncode == 4


class TestQuery:
    def test_self_query_distance_zero_first(self, workspace, index_file):
        # img_000_000 is class 0's exemplar, so its representative distance is 0
        fmap = workspace / "fmaps" / "img_000_000.fmap"
        proc = run_cli("query", "--index", index_file, "--fmap", fmap, "--k", 4)
        assert proc.returncode == 0, proc.stderr
        lines = [json.loads(line) for line in proc.stdout.splitlines()]
        assert lines[0]["stage"] == "CLASS"
        assert lines[0]["id"] == 0
        assert lines[0]["distance"] == 0.0
        distances = [l["distance"] for l in lines]
        assert distances == sorted(distances)

    def test_refine_output_within_candidates(self, workspace, index_file):
        fmap = workspace / "fmaps" / "img_001_002.fmap"
        proc = run_cli("query", "--index", index_file, "--fmap", fmap,
                       "--k", 4, "--refine", 2)
        assert proc.returncode == 0, proc.stderr
        lines = [json.loads(line) for line in proc.stdout.splitlines()]
        class_lines = [l for l in lines if l["stage"] == "CLASS"]
        image_lines = [l for l in lines if l["stage"] == "IMAGE"]
        candidates = {l["id"] for l in class_lines[:2]}
        allowed_prefixes = {f"img_{c:03d}" for c in candidates}
        assert image_lines, "refinement stage missing"
        assert all(l["id"][:7] in allowed_prefixes for l in image_lines)
        assert image_lines[0]["id"] == "img_001_002"
        assert image_lines[0]["distance"] == 0.0

    def test_k_too_large_exits_5(self, workspace, index_file):
        fmap = sorted((workspace / "fmaps").iterdir())[0]
        proc = run_cli("query", "--index", index_file, "--fmap", fmap, "--k", 99)
        assert proc.returncode == 5

    def test_dimension_mismatch_exits_5(self, workspace, index_file, tmp_path):
        cfg = tmp_path / "macs.json"
        cfg.write_text(json.dumps({"fusion": {"branches": [{"kind": "MAC"}]}}))
        fmap = sorted((workspace / "fmaps").iterdir())[0]
        proc = run_cli("query", "--index", index_file, "--fmap", fmap,
                       "--config", cfg, "--k", 2)
        assert proc.returncode == 5


class TestEval:
    def test_self_eval_perfect_recall(self, workspace, tmp_path):
        report_path = tmp_path / "report.json"
        proc = run_cli("eval", "--index-fmaps", workspace / "fmaps",
                       "--query-fmaps", workspace / "fmaps",
                       "--truth", workspace / "labels.tsv",
                       "--ks", "1,2", "--out", report_path)
        assert proc.returncode == 0, proc.stderr
        report = json.loads(report_path.read_text())
        assert report["recall_at"]["1"] == 1.0
        assert report["top1_accuracy"] == 1.0
        assert report["n_queries"] == 12

    def test_byte_identical_reports(self, workspace, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for path in (a, b):
            assert run_cli("eval", "--index-fmaps", workspace / "fmaps",
                           "--query-fmaps", workspace / "fmaps",
                           "--truth", workspace / "labels.tsv",
                           "--ks", "1,2,4", "--out", path).returncode == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_truth_file_exits_2(self, workspace, tmp_path):
        proc = run_cli("eval", "--index-fmaps", workspace / "fmaps",
                       "--query-fmaps", workspace / "fmaps",
                       "--truth", tmp_path / "nope.tsv",
                       "--out", tmp_path / "r.json")
        assert proc.returncode == 2


class TestUsage:
    def test_missing_required_flag_exits_5(self):
        proc = run_cli("query", "--index", "x.indx")
        assert proc.returncode == 5

    def test_unknown_subcommand_exits_5(self):
        proc = run_cli("frobnicate")
        assert proc.returncode == 5
