//! Exactness properties of the recognition model: gradient correctness
//! against central finite differences, padding/permutation/duplication
//! invariances, and the time-rescaling law.

use mjp_core::{AdjacencyMatrix, ObservedSeries, ProbabilityVector, RateMatrix};
use mjp_infer::{
    assemble_batch, attend_paths, backward, encode_series, forward, loss_and_head_grads,
    normalize_inputs, predict_batch, ModelConfig, NetParams, RecordEntry, RecordTruth,
};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        c_max: 3,
        encoder_hidden: 8,
        query_count: 2,
        key_width: 4,
        head_count: 2,
        head_widths: vec![8, 8],
        lambda: 0.7,
        l_max: 8,
        k_max: 8,
        ..ModelConfig::default()
    }
}

fn random_series(rng: &mut ChaCha8Rng, len: usize, c: usize, scale: f64) -> ObservedSeries {
    let mut t = 0.0;
    let mut times = Vec::with_capacity(len);
    let mut labels = Vec::with_capacity(len);
    for _ in 0..len {
        t += rng.random_range(0.05..1.0) * scale;
        times.push(t);
        labels.push(rng.random_range(0..c));
    }
    ObservedSeries::new(times, labels).unwrap()
}

fn random_truth(rng: &mut ChaCha8Rng, c: usize) -> (RateMatrix, AdjacencyMatrix, ProbabilityVector) {
    let adjacency = AdjacencyMatrix::fully_connected(c);
    let rates: Vec<f64> = (0..c * c).map(|_| rng.random_range(0.05..0.95)).collect();
    let f = RateMatrix::from_off_diagonal(c, |i, j| rates[i * c + j]).unwrap();
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..1.0)).collect();
    let pi0 = ProbabilityVector::from_unnormalized(w).unwrap();
    (f, adjacency, pi0)
}

struct FixtureData {
    truths: Vec<(RateMatrix, AdjacencyMatrix, ProbabilityVector)>,
    series: Vec<Vec<ObservedSeries>>,
}

fn fixture(rng: &mut ChaCha8Rng, config: &ModelConfig, n_records: usize, k: usize) -> FixtureData {
    let c = config.c_max;
    let truths: Vec<_> = (0..n_records).map(|_| random_truth(rng, c)).collect();
    let series: Vec<Vec<ObservedSeries>> = (0..n_records)
        .map(|r| {
            let scale = [1.0, 7.0, 0.02][r % 3];
            (0..k)
                .map(|_| {
                    let len = rng.random_range(1..=config.l_max.min(6));
                    random_series(rng, len, c, scale)
                })
                .collect()
        })
        .collect();
    FixtureData { truths, series }
}

fn entries<'a>(fx: &'a FixtureData) -> Vec<RecordEntry<'a>> {
    fx.truths
        .iter()
        .zip(&fx.series)
        .map(|((f, a, p), s)| RecordEntry {
            series: s.iter().collect(),
            truth: Some(RecordTruth {
                rate_matrix: f,
                adjacency: a,
                pi0: p,
            }),
        })
        .collect()
}

fn batch_loss(params: &NetParams, config: &ModelConfig, fx: &FixtureData) -> f64 {
    let batch = assemble_batch(&entries(fx), config).unwrap();
    let out = forward(params, config, &batch).unwrap();
    let targets = batch.targets.as_ref().unwrap();
    loss_and_head_grads(&out.phi_rate, &out.phi_var, &out.phi_init, targets, config.lambda).loss
}

#[test]
fn gradients_match_central_finite_differences() {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let fx = fixture(&mut rng, &config, 2, 3);
    let params = NetParams::init(&config, 5);

    let batch = assemble_batch(&entries(&fx), &config).unwrap();
    let out = forward(&params, &config, &batch).unwrap();
    let targets = batch.targets.as_ref().unwrap();
    let lg = loss_and_head_grads(&out.phi_rate, &out.phi_var, &out.phi_init, targets, config.lambda);
    let grads = backward(
        &params,
        &config,
        &batch,
        &out,
        &lg.d_phi_rate,
        &lg.d_phi_var,
        &lg.d_phi_init,
    );

    let step = 1e-5;
    let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
    let analytic: Vec<Array2<f64>> = grads.named_tensors().iter().map(|(_, t)| (*t).clone()).collect();

    for ti in 0..names.len() {
        let (rows, cols) = {
            let t = params.named_tensors()[ti].1;
            (t.nrows(), t.ncols())
        };
        for probe in 0..3 {
            let r = (probe * 31 + ti * 7) % rows;
            let cc = (probe * 17 + ti * 3) % cols;

            let mut plus = params.clone();
            plus.tensors_mut()[ti][[r, cc]] += step;
            let lp = batch_loss(&plus, &config, &fx);

            let mut minus = params.clone();
            minus.tensors_mut()[ti][[r, cc]] -= step;
            let lm = batch_loss(&minus, &config, &fx);

            let fd = (lp - lm) / (2.0 * step);
            let an = analytic[ti][[r, cc]];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(
                rel < 1e-4,
                "tensor {} entry ({r},{cc}): analytic {an:.10e} vs fd {fd:.10e} (rel {rel:.3e})",
                names[ti]
            );
        }
    }
}

#[test]
fn backward_is_deterministic() {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fx = fixture(&mut rng, &config, 2, 3);
    let params = NetParams::init(&config, 9);
    let run = || {
        let batch = assemble_batch(&entries(&fx), &config).unwrap();
        let out = forward(&params, &config, &batch).unwrap();
        let targets = batch.targets.as_ref().unwrap();
        let lg =
            loss_and_head_grads(&out.phi_rate, &out.phi_var, &out.phi_init, targets, config.lambda);
        backward(
            &params,
            &config,
            &batch,
            &out,
            &lg.d_phi_rate,
            &lg.d_phi_var,
            &lg.d_phi_init,
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn embeddings_ignore_padding_exactly() {
    // The same series embedded alone and alongside a much longer one
    // (which forces a larger padded length) must match bit for bit.
    let config = tiny_config();
    let params = NetParams::init(&config, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let short = random_series(&mut rng, 3, config.c_max, 1.0);
    let long = random_series(&mut rng, 8, config.c_max, 1.0);

    // In a packed batch the short series sits next to the long one; its
    // rows are padded up to length 8 there.
    let batch = assemble_batch(
        &[RecordEntry {
            series: vec![&short, &long],
            truth: None,
        }],
        &config,
    )
    .unwrap();
    let out = forward(&params, &config, &batch).unwrap();

    // Record normalization uses the joint tau_max, so encode the short
    // series alone at that same scale for an apples-to-apples comparison.
    let tau_max = long.max_time().max(short.max_time());
    let rescaled = ObservedSeries::new(
        short.times().iter().map(|t| t / tau_max).collect(),
        short.labels().to_vec(),
    )
    .unwrap();
    let solo = encode_series(&params, &config, &rescaled).unwrap();

    assert_eq!(solo.len(), config.embedding_width());
    for (col, a) in solo.iter().enumerate() {
        let b = out.emb[[0, col]];
        assert_eq!(*a, b, "padded embedding differs from solo embedding at {col}");
    }
}

#[test]
fn observation_order_changes_embedding() {
    let config = tiny_config();
    let params = NetParams::init(&config, 17);
    let a = ObservedSeries::new(vec![0.2, 0.5, 1.0], vec![0, 1, 2]).unwrap();
    let b = ObservedSeries::new(vec![0.2, 0.5, 1.0], vec![1, 0, 2]).unwrap();
    let ea = encode_series(&params, &config, &a).unwrap();
    let eb = encode_series(&params, &config, &b).unwrap();
    let diff: f64 = ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-6, "sequence encoder must be order-sensitive");
}

#[test]
fn attention_is_permutation_invariant() {
    let config = tiny_config();
    let params = NetParams::init(&config, 19);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let k = 6;
    let width = config.embedding_width();
    let emb = Array2::from_shape_fn((k, width), |_| rng.random_range(-1.0..1.0));
    let rep = attend_paths(&params, &config, &emb).unwrap();
    assert_eq!(rep.len(), config.representation_width());

    let perm = [3usize, 0, 5, 1, 4, 2];
    let mut shuffled = Array2::zeros((k, width));
    for (to, &from) in perm.iter().enumerate() {
        shuffled.row_mut(to).assign(&emb.row(from));
    }
    let rep_perm = attend_paths(&params, &config, &shuffled).unwrap();
    for (a, b) in rep.iter().zip(&rep_perm) {
        assert!((a - b).abs() < 1e-9, "permutation changed representation");
    }
}

#[test]
fn attention_is_duplication_invariant() {
    let config = tiny_config();
    let params = NetParams::init(&config, 29);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let k = 4;
    let width = config.embedding_width();
    let emb = Array2::from_shape_fn((k, width), |_| rng.random_range(-1.0..1.0));
    let mut doubled = Array2::zeros((2 * k, width));
    for i in 0..k {
        doubled.row_mut(i).assign(&emb.row(i));
        doubled.row_mut(k + i).assign(&emb.row(i));
    }
    let rep = attend_paths(&params, &config, &emb).unwrap();
    let rep2 = attend_paths(&params, &config, &doubled).unwrap();
    for (a, b) in rep.iter().zip(&rep2) {
        assert!((a - b).abs() < 1e-9, "duplication changed representation");
    }
}

#[test]
fn attention_single_path_and_empty() {
    let config = tiny_config();
    let params = NetParams::init(&config, 37);
    let emb = Array2::from_elem((1, config.embedding_width()), 0.3);
    let rep1 = attend_paths(&params, &config, &emb).unwrap();
    let rep2 = attend_paths(&params, &config, &emb).unwrap();
    assert_eq!(rep1, rep2);
    let empty = Array2::zeros((0, config.embedding_width()));
    assert!(attend_paths(&params, &config, &empty).is_err());
}

#[test]
fn zeroed_heads_give_unit_rates_and_uniform_pi0() {
    let config = tiny_config();
    let mut params = NetParams::init(&config, 41);
    for t in params.tensors_mut() {
        t.fill(0.0);
    }
    let series: Vec<ObservedSeries> = (0..3)
        .map(|i| ObservedSeries::new(vec![1.0 + i as f64, 4.0 + i as f64], vec![0, 1]).unwrap())
        .collect();
    let refs: Vec<&ObservedSeries> = series.iter().collect();
    let pred = predict_batch(&params, &config, &refs, config.c_max).unwrap();
    let tau_max = 6.0;
    assert_eq!(pred.tau_max, tau_max);
    for i in 0..config.c_max {
        for j in 0..config.c_max {
            if i != j {
                assert!(
                    (pred.f_hat.get(i, j) - 1.0 / tau_max).abs() < 1e-15,
                    "zero pre-activations must give rate 1/tau_max"
                );
            }
        }
        assert!((pred.pi0_hat.get(i) - 1.0 / config.c_max as f64).abs() < 1e-15);
    }
}

#[test]
fn time_scale_equivariance_exact() {
    let config = tiny_config();
    let params = NetParams::init(&config, 43);
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let series: Vec<ObservedSeries> = (0..5)
        .map(|_| random_series(&mut rng, rng.random_range(2..=6), config.c_max, 1.0))
        .collect();
    let refs: Vec<&ObservedSeries> = series.iter().collect();
    let base = predict_batch(&params, &config, &refs, config.c_max).unwrap();

    for &s in &[2.0f64, 0.5, 3.0] {
        let scaled: Vec<ObservedSeries> = series
            .iter()
            .map(|x| {
                ObservedSeries::new(x.times().iter().map(|&t| t * s).collect(), x.labels().to_vec())
                    .unwrap()
            })
            .collect();
        let scaled_refs: Vec<&ObservedSeries> = scaled.iter().collect();
        let pred = predict_batch(&params, &config, &scaled_refs, config.c_max).unwrap();
        assert!((pred.tau_max - base.tau_max * s).abs() < 1e-12 * base.tau_max * s);
        for i in 0..config.c_max {
            for j in 0..config.c_max {
                if i == j {
                    continue;
                }
                let want = base.f_hat.get(i, j) / s;
                let got = pred.f_hat.get(i, j);
                let rel = (got - want).abs() / want.abs().max(1e-300);
                assert!(
                    rel < 1e-12,
                    "scale {s}: rate ({i},{j}) {got:.17e} vs {want:.17e} (rel {rel:.2e})"
                );
                let want_v = pred_var(&base, i, j, config.c_max) / s;
                let got_v = pred_var(&pred, i, j, config.c_max);
                assert!((got_v - want_v).abs() / want_v.max(1e-300) < 1e-12);
            }
        }
        for i in 0..config.c_max {
            assert!((pred.pi0_hat.get(i) - base.pi0_hat.get(i)).abs() < 1e-12);
        }
    }
}

fn pred_var(p: &mjp_infer::PredictionResult, i: usize, j: usize, c: usize) -> f64 {
    p.var_hat[i * c + j]
}

#[test]
fn restriction_zeroes_block_and_renormalizes() {
    let config = tiny_config();
    let params = NetParams::init(&config, 53);
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    // Labels within 2 states so restriction to c = 2 is meaningful.
    let series: Vec<ObservedSeries> = (0..4)
        .map(|_| random_series(&mut rng, 5, 2, 1.0))
        .collect();
    let refs: Vec<&ObservedSeries> = series.iter().collect();

    let full = predict_batch(&params, &config, &refs, config.c_max).unwrap();
    assert_eq!(full.f_hat.dim(), config.c_max);
    // All off-diagonal rates strictly positive before restriction.
    for i in 0..config.c_max {
        for j in 0..config.c_max {
            if i != j {
                assert!(full.f_hat.get(i, j) > 0.0);
                assert!(pred_var(&full, i, j, config.c_max) >= 0.0);
            }
        }
    }

    let restricted = predict_batch(&params, &config, &refs, 2).unwrap();
    assert_eq!(restricted.f_hat.dim(), 2);
    for i in 0..2 {
        let sum: f64 = restricted.f_hat.row(i).iter().sum();
        assert!(sum.abs() < 1e-12);
    }
    let pi_sum: f64 = restricted.pi0_hat.weights().iter().sum();
    assert!((pi_sum - 1.0).abs() < 1e-12);
}

#[test]
fn predict_splits_into_expected_batches() {
    let config = tiny_config();
    let params = NetParams::init(&config, 61);
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let series: Vec<ObservedSeries> = (0..45)
        .map(|_| random_series(&mut rng, 4, config.c_max, 1.0))
        .collect();
    let summary = mjp_infer::predict(&params, &config, &series, config.c_max, Some(15)).unwrap();
    assert_eq!(summary.batch_count, 3);
    assert_eq!(summary.per_batch.len(), 3);

    // A single batch: mean equals the lone prediction.
    let one = mjp_infer::predict(&params, &config, &series[..10], config.c_max, Some(300)).unwrap();
    assert_eq!(one.batch_count, 1);
    for i in 0..config.c_max {
        for j in 0..config.c_max {
            assert_eq!(one.mean.f_hat.get(i, j), one.per_batch[0].f_hat.get(i, j));
        }
    }
    assert!(one.std_f.iter().all(|&x| x == 0.0));
}
