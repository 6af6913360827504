import numpy as np
import pytest

from nvvc.cli import main
from nvvc.rendering import read_ppm


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = main([
        "synth", "--out", str(data), "--frames", "2", "--views", "3",
        "--size", "20", "--test-views", "1",
    ])
    assert rc == 0
    cfgfile = root / "tiny.cfg"
    cfgfile.write_text(
        "coef_size = 12\ncoef_channels = 4\n"
        "basis_sizes = 6,8\nbasis_channels = 2\nbasis_freqs = 1,2\n"
        "mlp_hidden = 16,16\ndir_octaves = 1\n"
        "iters_iframe = 30\niters_pframe = 15\nrays_per_batch = 128\nn_samples = 8\n"
    )
    stream = root / "out.nvv"
    rc = main(["encode", "--config", str(cfgfile), "--data", str(data), "--out", str(stream)])
    assert rc == 0
    return root, data, cfgfile, stream


def test_cli_decode(cli_workspace, tmp_path):
    root, data, cfgfile, stream = cli_workspace
    out = tmp_path / "dec"
    assert main(["decode", str(stream), "--out-dir", str(out)]) == 0
    files = sorted(out.glob("frame*.npz"))
    assert len(files) == 2
    arc = np.load(files[0])
    assert "coef" in arc and "basis0" in arc and "mlp" in arc


def test_cli_render(cli_workspace, tmp_path):
    root, data, cfgfile, stream = cli_workspace
    out = tmp_path / "img.ppm"
    rc = main([
        "render", "--stream", str(stream), "--data", str(data),
        "--frame", "1", "--view", "2", "--out", str(out),
    ])
    assert rc == 0
    img = read_ppm(out)
    assert img.shape == (20, 20, 3)


def test_cli_eval_and_check(cli_workspace, tmp_path, capsys):
    root, data, cfgfile, stream = cli_workspace
    csv = tmp_path / "point.csv"
    rc = main(["eval", "--stream", str(stream), "--data", str(data), "--csv", str(csv)])
    assert rc == 0
    assert csv.exists()
    # an impossible threshold must fail the check with exit code 3
    rc = main([
        "eval", "--stream", str(stream), "--data", str(data),
        "--check", "--min-train-psnr", "98", "--min-test-psnr", "98",
    ])
    assert rc == 3


def test_cli_bdrate(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text(
        "rate_bits,psnr_train,psnr_test\n"
        "100000,30,30\n200000,33,33\n400000,36,36\n800000,39,39\n"
    )
    b.write_text(
        "rate_bits,psnr_train,psnr_test\n"
        "200000,30,30\n400000,33,33\n800000,36,36\n1600000,39,39\n"
    )
    assert main(["bdrate", str(a), str(b)]) == 0


def test_cli_bad_stream_is_format_error(tmp_path):
    bad = tmp_path / "bad.nvv"
    bad.write_bytes(b"JUNKJUNKJUNK")
    assert main(["decode", str(bad), "--out-dir", str(tmp_path / "x")]) == 2


def test_cli_bad_config_is_usage_error(cli_workspace, tmp_path):
    root, data, cfgfile, stream = cli_workspace
    assert main([
        "encode", "--data", str(data), "--out", str(tmp_path / "y.nvv"),
        "--set", "nonsense=1",
    ]) == 1
