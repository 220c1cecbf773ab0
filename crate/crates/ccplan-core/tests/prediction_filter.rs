//! Filter and propagation checks against textbook implementations.
//!
//! The oracle filter below recomputes every update with the plain
//! covariance form `(I - K H) Sigma` and an explicit matrix inverse, so the
//! library's Joseph-form path is compared against an independent derivation
//! rather than against itself.

use ccplan_core::prediction::{
    dlqr_gain, kf_predict, kf_update, predicted_face_estimates, propagate_samples,
    FilterState, ShapeTemplate,
};
use ccplan_core::stats::{gaussian_draw, raw_mean_cov, rng_for, GaussianBelief, SampleSet};
use nalgebra::{DMatrix, DVector};

fn prior() -> FilterState {
    FilterState::new(
        DVector::from_row_slice(&[1.0, -2.0, 0.5]),
        DMatrix::from_row_slice(
            3,
            3,
            &[1.2, 0.2, -0.1, 0.2, 0.9, 0.15, -0.1, 0.15, 0.6],
        ),
    )
    .unwrap()
}

/// Textbook measurement update: standard covariance form, explicit inverse.
fn textbook_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = h * cov * h.transpose() + r;
    let k = cov * h.transpose() * s.try_inverse().expect("innovation invertible");
    let mean_post = mean + &k * (y - h * mean);
    let n = cov.nrows();
    let cov_post = (DMatrix::identity(n, n) - &k * h) * cov;
    (mean_post, cov_post)
}

#[test]
fn joseph_update_matches_the_standard_form() {
    let state = prior();
    let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    let r = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]);
    let y = DVector::from_row_slice(&[1.4, -1.1]);

    let updated = kf_update(&state, &h, &r, &y).unwrap();
    let (mean_ref, cov_ref) = textbook_update(&state.mean, &state.cov, &h, &r, &y);

    assert!((&updated.mean - &mean_ref).norm() < 1e-10);
    let cov_err = (&updated.cov - &cov_ref).abs().max();
    assert!(cov_err < 1e-8, "covariance forms disagree by {cov_err:.2e}");
    // Joseph form must stay symmetric PSD.
    assert!((&updated.cov - updated.cov.transpose()).abs().max() < 1e-12);
    assert!(updated.cov.clone().symmetric_eigen().eigenvalues.min() > -1e-12);
}

#[test]
fn exact_measurements_collapse_the_posterior() {
    let state = prior();
    let h = DMatrix::identity(3, 3);
    let r = DMatrix::zeros(3, 3);
    let y = DVector::from_row_slice(&[0.3, 0.7, -0.2]);
    let updated = kf_update(&state, &h, &r, &y).unwrap();
    assert!((&updated.mean - &y).norm() < 1e-10);
    assert!(updated.cov.abs().max() < 1e-10);

    // Measuring one component exactly kills exactly that marginal.
    let h1 = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let r1 = DMatrix::zeros(1, 1);
    let y1 = DVector::from_element(1, 2.5);
    let partial = kf_update(&state, &h1, &r1, &y1).unwrap();
    assert!((partial.mean[0] - 2.5).abs() < 1e-10);
    assert!(partial.cov[(0, 0)].abs() < 1e-10);
    // Unmeasured directions keep positive variance.
    assert!(partial.cov[(2, 2)] > 0.1);
}

#[test]
fn uninformative_measurements_leave_the_prior_alone() {
    let state = prior();
    let h = DMatrix::identity(3, 3);
    let r = DMatrix::identity(3, 3) * 1e12;
    let y = DVector::from_row_slice(&[50.0, -80.0, 20.0]);
    let updated = kf_update(&state, &h, &r, &y).unwrap();
    assert!((&updated.mean - &state.mean).norm() < 1e-8);
    assert!((&updated.cov - &state.cov).abs().max() < 1e-8);
}

#[test]
fn predict_applies_the_affine_map_and_adds_noise_covariance() {
    let state = prior();
    let e = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.0, 0.95, 0.1, 0.0, 0.0, 0.8]);
    let f = DVector::from_row_slice(&[0.1, -0.05, 0.2]);
    let w = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.04, 0.01, 0.02]));
    let pred = kf_predict(&state, &e, &f, &w).unwrap();
    assert!((&pred.mean - (&e * &state.mean + &f)).norm() < 1e-12);
    let cov_ref = &e * &state.cov * e.transpose() + &w;
    assert!((&pred.cov - &cov_ref).abs().max() < 1e-12);
}

#[test]
fn filter_cycle_tracks_an_independent_replay() {
    // Three predict/update rounds against the textbook recursion.
    let e = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.0, 0.95, 0.1, 0.0, 0.0, 0.8]);
    let f = DVector::from_row_slice(&[0.1, -0.05, 0.2]);
    let w = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.04, 0.01, 0.02]));
    let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let r = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.16]);
    let measurements = [
        DVector::from_row_slice(&[1.1, -1.9]),
        DVector::from_row_slice(&[1.05, -1.75]),
        DVector::from_row_slice(&[1.2, -1.6]),
    ];

    let mut lib = prior();
    let (mut mean_ref, mut cov_ref) = (lib.mean.clone(), lib.cov.clone());
    for y in &measurements {
        lib = kf_predict(&lib, &e, &f, &w).unwrap();
        lib = kf_update(&lib, &h, &r, y).unwrap();

        mean_ref = &e * &mean_ref + &f;
        cov_ref = &e * &cov_ref * e.transpose() + &w;
        let (m, c) = textbook_update(&mean_ref, &cov_ref, &h, &r, y);
        mean_ref = m;
        cov_ref = c;

        assert!((&lib.mean - &mean_ref).norm() < 1e-10);
        assert!((&lib.cov - &cov_ref).abs().max() < 1e-8);
    }
}

#[test]
fn propagated_clouds_obey_the_moment_recursions() {
    let e = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.95]);
    let f = DVector::from_row_slice(&[0.1, -0.05]);
    let sigma_w = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.04, 0.01]));
    let init = GaussianBelief::new(
        DVector::from_row_slice(&[1.0, 2.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
    )
    .unwrap();
    let noise_belief = GaussianBelief::new(DVector::zeros(2), sigma_w.clone()).unwrap();

    let n_s = 20_000;
    let mut rng = rng_for(515, "cloud", 0);
    let cloud0 = gaussian_draw(&init, n_s, &mut rng);
    let noise: Vec<SampleSet> = (0..3)
        .map(|_| gaussian_draw(&noise_belief, n_s, &mut rng))
        .collect();
    let noise_refs: Vec<&SampleSet> = noise.iter().collect();
    let clouds = propagate_samples(&cloud0, &e, &f, &noise_refs).unwrap();
    assert_eq!(clouds.len(), 3);

    let mut mean_ref = init.mean.clone();
    let mut cov_ref = init.cov.clone();
    for cloud in &clouds {
        mean_ref = &e * &mean_ref + &f;
        cov_ref = &e * &cov_ref * e.transpose() + &sigma_w;
        let (m, c) = raw_mean_cov(cloud);
        assert!(
            (&m - &mean_ref).norm() < 0.05,
            "cloud mean drifted by {}",
            (&m - &mean_ref).norm()
        );
        assert!(
            (&c - &cov_ref).abs().max() < 0.05,
            "cloud covariance drifted by {}",
            (&c - &cov_ref).abs().max()
        );
    }
}

#[test]
fn propagation_is_a_pure_function_of_its_inputs() {
    let e = DMatrix::identity(2, 2);
    let f = DVector::zeros(2);
    let init = SampleSet::new(DMatrix::from_row_slice(
        3,
        2,
        &[0.0, 0.0, 1.0, 1.0, -1.0, 2.0],
    ))
    .unwrap();
    let noise = SampleSet::new(DMatrix::from_row_slice(
        3,
        2,
        &[0.1, 0.0, -0.1, 0.2, 0.0, -0.3],
    ))
    .unwrap();
    let a = propagate_samples(&init, &e, &f, &[&noise]).unwrap();
    let b = propagate_samples(&init, &e, &f, &[&noise]).unwrap();
    assert_eq!(a[0].data(), b[0].data());
    // Identity dynamics: each sample moves by exactly its own noise draw.
    let expect = init.data() + noise.data();
    assert!((a[0].data() - expect).abs().max() < 1e-15);
}

#[test]
fn lqr_gain_hits_the_scalar_fixed_point() {
    // a = b = q = r = 1: the Riccati value is the golden ratio and the gain
    // its reciprocal.
    let one = DMatrix::from_element(1, 1, 1.0);
    let k = dlqr_gain(&one, &one, &one, &one).unwrap();
    let phi = 0.5 * (1.0 + 5.0f64.sqrt());
    assert!((k[(0, 0)] - 1.0 / phi).abs() < 1e-8);
    // The closed loop is stable.
    assert!((1.0 - k[(0, 0)]).abs() < 1.0);
}

#[test]
fn car_shape_classifies_inside_and_outside_points() {
    let shape = ShapeTemplate::axis_aligned_car(8.0, 4.0, 4, 4).unwrap();
    let chi = DVector::from_row_slice(&[10.0, 0.0, 5.0, 0.0]);
    let inside = |px: f64, py: f64| {
        let x_tilde = DVector::from_row_slice(&[px, py, 0.0, 0.0, 1.0]);
        shape.contains(&chi, &x_tilde)
    };
    assert!(inside(10.0, 0.0));
    assert!(inside(13.5, 1.5));
    assert!(!inside(14.5, 0.0)); // past the front bumper
    assert!(!inside(10.0, 2.5)); // past the side
    assert!(!inside(0.0, 0.0));
}

#[test]
fn predicted_faces_line_up_with_the_clouds() {
    let shape = ShapeTemplate::axis_aligned_car(8.0, 4.0, 4, 4).unwrap();
    let belief = GaussianBelief::new(
        DVector::from_row_slice(&[12.0, -2.0, 8.0, 0.0]),
        DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 0.1, 0.4, 0.05])),
    )
    .unwrap();
    let mut rng = rng_for(515, "faces", 0);
    let clouds = vec![
        gaussian_draw(&belief, 60, &mut rng),
        gaussian_draw(&belief, 60, &mut rng),
    ];
    let groups = predicted_face_estimates(&clouds, &shape, 3, 2).unwrap();
    assert_eq!(groups.len(), 2);
    for (k, g) in groups.iter().enumerate() {
        assert_eq!(g.time_index, 2 + k);
        assert_eq!(g.obstacle_index, 3);
        assert_eq!(g.faces.len(), 4);
        for (i, face) in g.faces.iter().enumerate() {
            assert_eq!(face.face_index, i);
            let samples = face.samples().expect("sampled faces");
            assert_eq!(samples.n_samples(), 60);
            // Front-bumper face: ego coefficient +1 on the first position
            // axis, offset driven by the obstacle draw.
            if i == 0 {
                let d = samples.row(0);
                assert!((d[0] - 1.0).abs() < 1e-12);
                let chi = clouds[k].row(0);
                assert!((d[4] - (-chi[0] - 4.0)).abs() < 1e-12);
            }
        }
    }
}
