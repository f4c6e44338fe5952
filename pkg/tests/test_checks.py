from lab.checks import END_TO_END_TOLERANCE, image_encoder_spot_check, run_gradient_suite

PRIMITIVES = {"add", "mul", "div", "tanh", "log", "sqrt", "relu", "matmul", "det3", "softmax_rows", "concat", "gather"}
LOSSES = {"contrastive_loss", "gram_volume", "gram_loss", "recon_mse", "rule_loss", "total_loss"}


def test_gradient_suite_passes():
    rows = run_gradient_suite(range(3), end_to_end=False)
    names = {row["name"] for row in rows}
    assert PRIMITIVES <= names
    assert LOSSES <= names
    failed = [row for row in rows if not row["passed"]]
    assert failed == []


def test_image_encoder_end_to_end():
    assert image_encoder_spot_check(seed=0, coords=5) < END_TO_END_TOLERANCE
