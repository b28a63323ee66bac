//! Finite-difference checks of every differentiable operation in `f64`.

mod common;

use common::grad;

#[test]
fn conv2d_relu_concat() {
    grad::conv2d_relu_concat().unwrap();
}

#[test]
fn bilinear_sample_away_from_integers() {
    grad::bilinear_sample_away_from_integers().unwrap();
}

#[test]
fn view_statistics() {
    grad::view_statistics().unwrap();
}

#[test]
fn light_field_losses() {
    grad::light_field_losses().unwrap();
}

#[test]
fn total_objective_through_network() {
    grad::total_objective_through_network().unwrap();
}

#[test]
fn flow_sum_wrt_random_parameters() {
    grad::flow_sum_wrt_random_parameters().unwrap();
}
