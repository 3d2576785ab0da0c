//! Central finite-difference checks of every differentiable operation.

mod common;
mod gradsuite;

#[test]
fn conv2d_gradients() {
    gradsuite::conv2d_gradients();
}

#[test]
fn batchnorm_gradients() {
    gradsuite::batchnorm_gradients();
}

#[test]
fn activation_gradients() {
    gradsuite::activation_gradients();
}

#[test]
fn upsample_concat_slice_gradients() {
    gradsuite::upsample_concat_slice_gradients();
}

#[test]
fn arithmetic_gradients() {
    gradsuite::arithmetic_gradients();
}

#[test]
fn blur_gradients() {
    gradsuite::blur_gradients();
}

#[test]
fn filtering_gradients() {
    gradsuite::filtering_gradients();
}

#[test]
fn fusion_gradients() {
    gradsuite::fusion_gradients();
}

#[test]
fn ssim_and_loss_gradients() {
    gradsuite::ssim_and_loss_gradients();
}
