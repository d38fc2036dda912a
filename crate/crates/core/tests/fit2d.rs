use gjs_core::fit2d::{
    empirical_divergence, fit, mixture_sample, moment_matched, DataDensity, FitOptions, FitParams, MixtureSpec,
    Objective, FD_STEP,
};
use gjs_core::{DivergenceSpec, Family, FullGaussian, SkewConvention};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(family: Family) -> DivergenceSpec {
    DivergenceSpec::new(family, SkewConvention::Primed)
}

fn shifted(g: &FullGaussian, dx: f64) -> FullGaussian {
    let mu = vec![g.mean()[0] + dx, g.mean()[1]];
    FullGaussian::new(mu, g.covariance().clone()).unwrap()
}

#[test]
fn single_component_mixture_matches_gaussian_moments() {
    let g = FullGaussian::from_rows(vec![1.0, -2.0], &[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let s = mixture_sample(&MixtureSpec::single(&g).unwrap(), 100_000, 4).unwrap();
    let m = moment_matched(&s).unwrap();
    for k in 0..2 {
        assert!((m.mean()[k] - g.mean()[k]).abs() < 0.05 * g.covariance()[(k, k)].sqrt());
    }
    for (a, b) in m.covariance().iter().zip(g.covariance().iter()) {
        assert!((a - b).abs() < 0.05 * 2.0);
    }
}

#[test]
fn estimates_prefer_the_matching_gaussian() {
    let g = FullGaussian::from_rows(vec![0.5, 0.0], &[vec![1.0, 0.2], vec![0.2, 0.7]]).unwrap();
    let data = mixture_sample(&MixtureSpec::single(&g).unwrap(), 1000, 2).unwrap();
    let fitted = moment_matched(&data).unwrap();
    for family in [Family::KlForward, Family::KlReverse, Family::Js, Family::Gjs] {
        let near = empirical_divergence(&data, &fitted, &spec(family), 2048, 1).unwrap();
        let far = empirical_divergence(&data, &shifted(&fitted, 5.0), &spec(family), 2048, 1).unwrap();
        assert!(near < far, "{family}: {near} vs {far}");
    }
}

#[test]
fn kl_directions_differ_on_bimodal_data() {
    let data = mixture_sample(&MixtureSpec::benchmark(), 1000, 3).unwrap();
    let g = FullGaussian::from_rows(vec![3.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let f = empirical_divergence(&data, &g, &spec(Family::KlForward), 2048, 1).unwrap();
    let r = empirical_divergence(&data, &g, &spec(Family::KlReverse), 2048, 1).unwrap();
    assert!(f > r + 1.0, "{f} vs {r}");
}

#[test]
fn finite_differences_pass_richardson_check() {
    let data = mixture_sample(&MixtureSpec::benchmark(), 1000, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for family in [Family::KlForward, Family::KlReverse, Family::Js, Family::Gjs] {
        let obj = Objective::new(&data, &spec(family), 2048, 1, &DataDensity::Kde).unwrap();
        for _ in 0..20 {
            let params = FitParams {
                mu: [rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)],
                chol_lower: [
                    rng.random_range(-0.5..1.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ],
            };
            let g1 = obj.gradient(&params, FD_STEP).unwrap();
            let g2 = obj.gradient(&params, 2.0 * FD_STEP).unwrap();
            let rich: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| (4.0 * a - b) / 3.0).collect();
            let err: f64 = g1.iter().zip(&rich).map(|(a, r)| (a - r).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = rich.iter().map(|r| r * r).sum::<f64>().sqrt();
            assert!(err <= 1e-3 * norm, "{family}: {err} vs {norm}");
        }
    }
}

#[test]
fn fits_recover_a_single_gaussian() {
    let g = FullGaussian::from_rows(vec![1.0, -0.5], &[vec![1.5, 0.3], vec![0.3, 0.8]]).unwrap();
    let data = mixture_sample(&MixtureSpec::single(&g).unwrap(), 1000, 9).unwrap();
    let opts = FitOptions {
        iters: 300,
        ..FitOptions::default()
    };
    for family in [Family::KlForward, Family::KlReverse, Family::Js, Family::Gjs] {
        let trace = fit(&data, &spec(family), &opts).unwrap();
        let fitted = trace.final_params.to_gaussian().unwrap();
        let dm = (fitted.mean() - g.mean()).norm();
        let dc = (fitted.covariance() - g.covariance()).norm() / g.covariance().norm();
        assert!(dm < 0.1, "{family}: mean off by {dm}");
        assert!(dc < 0.15, "{family}: covariance off by {dc}");
        assert!(trace.final_loss <= trace.steps[0].loss);
        let best = trace.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.steps.iter().all(|s| s.loss.is_finite()));
    }
}

#[test]
fn exact_density_ablation_runs() {
    let mixture = MixtureSpec::benchmark();
    let data = mixture_sample(&mixture, 500, 1).unwrap();
    let opts = FitOptions {
        iters: 20,
        data_density: DataDensity::Exact(mixture),
        ..FitOptions::default()
    };
    let trace = fit(&data, &spec(Family::KlReverse), &opts).unwrap();
    assert_eq!(trace.steps.len(), 20);
    let json = serde_json::to_string(&trace).unwrap();
    let back: gjs_core::fit2d::FitTrace = serde_json::from_str(&json).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn fits_are_deterministic() {
    let data = mixture_sample(&MixtureSpec::benchmark(), 500, 1).unwrap();
    let opts = FitOptions {
        iters: 10,
        ..FitOptions::default()
    };
    let a = fit(&data, &spec(Family::Gjs), &opts).unwrap();
    let b = fit(&data, &spec(Family::Gjs), &opts).unwrap();
    assert_eq!(a, b);
}
