//! Analytic gradients against central finite differences.

use pfe_core::discriminative::disc_loss_grad;
use pfe_core::flow::{cfm_loss, cfm_loss_grad, draw_path_samples, VectorFieldNet};
use pfe_core::mathcore::gradcheck::{self, probe_params};
use pfe_core::mathcore::{Activation, Matrix, MlpParams, Parameters};
use pfe_core::prompt::{EncoderConfig, FrozenEncoder, ImpressionSchema, LoraAdapter};
use pfe_core::rng::{normal_vec, rng_for};
use rand_chacha::ChaCha8Rng;

const PROBES: usize = 100;
const TOLERANCE: f64 = 1e-4;

fn probe<P: Parameters + Clone>(params: &P, grad: &P, loss: impl Fn(&P) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    probe_params(params, grad, loss, PROBES, rng)
}

fn probe_input(x: &[f64], grad: &[f64], loss: impl Fn(&[f64]) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    gradcheck::probe_input(x, grad, loss, PROBES, rng)
}

/// Scalar head on the network output so every output coordinate matters.
fn weighted_sum(out: &[f64], w: &[f64]) -> f64 {
    out.iter().zip(w).map(|(a, b)| a * b).sum()
}

#[test]
fn mlp_parameter_and_input_gradients() {
    let mut rng = rng_for(1, &[]);
    for hidden in [Activation::Relu, Activation::Identity] {
        let params = MlpParams::init(&[6, 9, 7, 4], hidden, &mut rng).unwrap();
        let x = normal_vec(&mut rng, 6, 1.0);
        let w = normal_vec(&mut rng, 4, 1.0);
        let (_, tape) = params.forward(&x).unwrap();
        let grad = params.backward(&tape, &w).unwrap();
        let loss = |p: &MlpParams| weighted_sum(&p.apply(&x).unwrap(), &w);
        let err = probe(&params, &grad.params, loss, &mut rng);
        assert!(err < TOLERANCE, "{hidden:?} params: {err:e}");
        let err = probe_input(&x, &grad.input, |v| weighted_sum(&params.apply(v).unwrap(), &w), &mut rng);
        assert!(err < TOLERANCE, "{hidden:?} input: {err:e}");
    }
}

#[test]
fn disc_loss_gradient_through_cosine_term() {
    let mut rng = rng_for(2, &[]);
    for _ in 0..5 {
        let target = normal_vec(&mut rng, 8, 1.0);
        let pred = normal_vec(&mut rng, 8, 1.0);
        let (_, grad) = disc_loss_grad(&pred, &target).unwrap();
        let err = probe_input(&pred, &grad, |p| disc_loss_grad(p, &target).unwrap().0, &mut rng);
        assert!(err < TOLERANCE, "{err:e}");
    }
}

#[test]
fn lora_and_projection_gradients_of_the_disc_objective() {
    let mut rng = rng_for(3, &[]);
    let schema = ImpressionSchema::builtin();
    let encoder = FrozenEncoder::new(
        EncoderConfig {
            phrase_dim: 12,
            output_dim: 10,
            ..Default::default()
        },
        &schema,
    )
    .unwrap();
    let mut adapter = LoraAdapter::for_encoder(&encoder, 3, 3.0, &mut rng).unwrap();
    // nonzero B so the gradient of A is exercised
    adapter.b = Matrix::from_vec(10, 3, normal_vec(&mut rng, 30, 0.5)).unwrap();
    let projection = MlpParams::init(&[10, 8, 8, 8, 5], Activation::Relu, &mut rng).unwrap();
    let pooled = normal_vec(&mut rng, 12, 0.3);
    let target = normal_vec(&mut rng, 5, 1.0);

    let objective = |a: &LoraAdapter, p: &MlpParams| {
        let o = encoder.project(&pooled, Some(a)).unwrap();
        disc_loss_grad(&p.apply(&o).unwrap(), &target).unwrap().0
    };

    let o = encoder.project(&pooled, Some(&adapter)).unwrap();
    let (out, tape) = projection.forward(&o).unwrap();
    let (_, g_out) = disc_loss_grad(&out, &target).unwrap();
    let mut proj_grad = projection.zeros_like();
    let g_o = projection.backward_accumulate(&tape, &g_out, &mut proj_grad).unwrap();
    let mut lora_grad = adapter.zeros_like();
    adapter.backward_accumulate(&pooled, &g_o, &mut lora_grad).unwrap();

    let err = probe(&adapter, &lora_grad, |a| objective(a, &projection), &mut rng);
    assert!(err < TOLERANCE, "adapter: {err:e}");
    let err = probe(&projection, &proj_grad, |p| objective(&adapter, p), &mut rng);
    assert!(err < TOLERANCE, "projection: {err:e}");
}

#[test]
fn cfm_gradients_for_parameters_and_conditions() {
    let mut rng = rng_for(4, &[]);
    let net = VectorFieldNet::new(3, 4, 10, 3, Activation::Relu, 2, &mut rng).unwrap();
    let data: Vec<(Vec<f64>, Vec<f64>)> = (0..6)
        .map(|_| (normal_vec(&mut rng, 3, 1.0), normal_vec(&mut rng, 4, 1.0)))
        .collect();
    let batch: Vec<(&[f64], &[f64])> = data.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
    let samples = draw_path_samples(&batch, 1e-4, &mut rng).unwrap();
    let grad = cfm_loss_grad(&net, &samples).unwrap();

    let err = probe(
        net.params(),
        &grad.params,
        |p| {
            let n = VectorFieldNet::from_params(p.clone(), 3, 4, 2).unwrap();
            cfm_loss(&n, &samples).unwrap()
        },
        &mut rng,
    );
    assert!(err < TOLERANCE, "params: {err:e}");

    for (k, s) in samples.iter().enumerate() {
        let err = probe_input(
            &s.condition,
            &grad.conditions[k],
            |c| {
                let mut moved = samples.clone();
                moved[k].condition = c.to_vec();
                cfm_loss(&net, &moved).unwrap()
            },
            &mut rng,
        );
        assert!(err < TOLERANCE, "condition {k}: {err:e}");
    }
}
