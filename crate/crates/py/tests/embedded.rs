use std::ffi::CString;

use jpgnet::jpgnet;
use pyo3::prelude::*;

fn run(code: &str) -> PyResult<()> {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(jpgnet);
        Python::initialize();
    });
    Python::attach(|py| py.run(&CString::new(code).unwrap(), None, None))
}

#[test]
fn filtering_and_metrics_from_python() {
    run(r#"
import jpgnet
img = jpgnet.Tensor([i / 24 for i in range(24)], [1, 2, 3, 4])
ident = jpgnet.identity_kernel_field(3, 4, 2, 3)
assert ident.shape == [1, 18, 3, 4]
assert jpgnet.apply_pixelwise_filter(img, ident, 3) == img
u = jpgnet.compute_uncertainty_map(ident)
assert u.tolist() == [0.0] * 12
other = jpgnet.Tensor.full([1, 2, 3, 4], 0.5)
assert jpgnet.naive_fuse(img, other, jpgnet.Tensor.zeros([1, 1, 3, 4])) == img
assert jpgnet.ssim(jpgnet.Tensor.full([1, 1, 16, 16], 0.3), jpgnet.Tensor.full([1, 1, 16, 16], 0.3)) == 1.0
assert abs(jpgnet.psnr(jpgnet.Tensor.zeros([1, 1, 4, 4]), jpgnet.Tensor.full([1, 1, 4, 4], 0.5)) - 6.0206) < 1e-3
assert jpgnet.loss_l1_ssim(jpgnet.Tensor.full([1, 1, 16, 16], 0.3), jpgnet.Tensor.full([1, 1, 16, 16], 0.3)) == -0.2
"#)
    .unwrap();
}

#[test]
fn masks_data_and_errors() {
    run(r#"
import jpgnet
for b in ["B20", "B40", "B60"]:
    m = jpgnet.generate_irregular_mask(32, 32, b, 5)
    assert jpgnet.classify_mask_ratio(m) == b
assert jpgnet.generate_irregular_mask(32, 32, "B20", 5) == jpgnet.generate_irregular_mask(32, 32, "B20", 5)
data = jpgnet.toy_dataset(2, 16, 0)
assert len(data) == 2 and data[0].shape == [1, 3, 16, 16]
try:
    jpgnet.Tensor([1.0, 2.0], [3])
    raise AssertionError("expected ValueError")
except ValueError:
    pass
try:
    jpgnet.Model("/nonexistent/ckpt")
    raise AssertionError("expected OSError")
except OSError:
    pass
try:
    jpgnet.compute_uncertainty_map(jpgnet.identity_kernel_field(2, 2, 1, 3), "median")
    raise AssertionError("expected ValueError")
except ValueError:
    pass
assert jpgnet.run_cli(["make-data", "--n", "0"]) == 2
"#)
    .unwrap();
}
