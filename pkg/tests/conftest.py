import shutil

import pytest

from mmvqtts.toy import make_toy_corpus

TINY_CONFIG = """\
[paths]
manifest = manifest.tsv
registry = speakers.tsv
hyp_dir = hyp
store = store
ckpt = ckpt
out = out

[features]
codebook_groups = 2
codebook_size = 16
kmeans_iters = 5

[selection]
budget1_s = 8
budget2_s = 5

[silpred]
blocks = 1
width = 16
heads = 2
ff_width = 32
epochs = 4

[am]
enc_blocks = 1
dec_blocks = 1
width = 16
heads = 2
ff_width = 32
dur_width = 16
batch_size = 4
max_steps = 8
lr = 0.003

[voc]
code_dim = 8
aux_dim = 4
enc_width = 16
enc_blocks = 1
gen_channels = 16
max_steps = 4
segment_frames = 16
batch_size = 2
lr = 0.001
"""


def write_tiny(root, n_per_speaker=2, seed=0, extra=""):
    make_toy_corpus(root, n_per_speaker=n_per_speaker, seed=seed)
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG + extra, encoding="utf-8")
    return cfg


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return write_tiny(root)


@pytest.fixture(scope="session")
def tiny_run(tiny_corpus):
    """A completed run-all over the tiny corpus (session-scoped; treat as read-only)."""
    from mmvqtts.config import load_config
    from mmvqtts.pipeline import run_all

    cfg = load_config(tiny_corpus)
    traces = run_all(cfg)
    return cfg, traces


@pytest.fixture
def tiny_copy(tiny_run, tmp_path):
    """A private copy of the completed tiny run, safe to damage."""
    from mmvqtts.config import load_config

    cfg, _ = tiny_run
    src = cfg.path("manifest").parent
    dst = tmp_path / "run"
    shutil.copytree(src, dst)
    return load_config(dst / "tiny.cfg")


# acceptance reporting: tests marked `acceptance(n, title)` get one summary line each

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when not in ("setup", "call"):
        return
    n, title = mark.args
    if report.when == "setup" and report.passed:
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _ACCEPTANCE[n] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
