use gjs_core::divergence::divergence_diag;
use gjs_core::{DivergenceSpec, Family, SkewConvention};
use gjs_vae::{init, loss, DecoderOutput, VaeArch};
use ndarray::Array2;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![
        Just(Family::KlForward),
        Just(Family::KlReverse),
        Just(Family::Gjs),
        Just(Family::GjsDual),
    ]
}

fn convention() -> impl Strategy<Value = SkewConvention> {
    prop_oneof![Just(SkewConvention::Original), Just(SkewConvention::Primed)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_decomposes_and_matches_closed_forms(
        model_seed in 0u64..1000,
        noise_seed in any::<u64>(),
        family in family(),
        conv in convention(),
        alpha in 0.0..=1.0f64,
        weight in 0.0..5.0f64,
        pixels in prop::collection::vec(0.0..=1.0f64, 5 * 12),
    ) {
        let arch = VaeArch::new(12, vec![10], 3, DecoderOutput::Mse).unwrap();
        let m = init(&arch, model_seed).unwrap();
        let x = Array2::from_shape_vec((5, 12), pixels).unwrap();
        let reg = DivergenceSpec::new(family, conv).with_alpha(alpha).unwrap().with_weight(weight).unwrap();
        let parts = loss(&m, x.view(), &reg, noise_seed).unwrap();
        prop_assert_eq!(parts.total.to_bits(), (parts.recon + weight * parts.div).to_bits());
        prop_assert!(parts.recon >= 0.0);

        let post = m.encode(x.view()).unwrap();
        let standalone: f64 = (0..5).map(|i| divergence_diag(&post.get(i).unwrap(), &reg).unwrap()).sum::<f64>() / 5.0;
        prop_assert!((parts.div - standalone).abs() <= 1e-10);
    }
}
