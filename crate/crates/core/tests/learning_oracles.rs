//! Learning objective and gradient against dense and finite-difference
//! references, plus training invariants.

use mlcsc::conv::{ConvLayer, Dictionary};
use mlcsc::learning::{
    dict_gradient, hard_threshold_dict, objective_eval, threshold_kernels, train, LambdaPolicy, LearnConfig,
    ObjectiveWeights, ZetaPolicy,
};
use mlcsc::model::MlcscModel;
use mlcsc::tensor::{SignalGeometry, SparseVec};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dense_layer(rng: &mut ChaCha8Rng, m_in: usize, m_out: usize, n: usize, stride: usize) -> ConvLayer {
    ConvLayer::from_dense(m_in, m_out, n, stride, &gaussian(rng, m_out * n * m_in)).unwrap()
}

fn random_code(rng: &mut ChaCha8Rng, geometry: SignalGeometry, nnz: usize) -> SparseVec {
    let entries: Vec<(usize, f64)> = sample(rng, geometry.len(), nnz)
        .into_iter()
        .map(|j| (j, rng.sample(StandardNormal)))
        .collect();
    SparseVec::from_entries(geometry, entries).unwrap()
}

/// For every matrix entry of the layer operator on a signal of `len`
/// samples, the kernel coordinate it copies: (row, col, dense kernel index).
fn matrix_entries(layer: &ConvLayer, len: usize) -> Vec<(usize, usize, usize)> {
    let (m_in, m_out, n, s) = (layer.m_in(), layer.m_out(), layer.n(), layer.stride());
    let mut out = Vec::new();
    for p in 0..len / s {
        for f in 0..m_out {
            for off in 0..n {
                for c in 0..m_in {
                    out.push((((p * s + off) % len) * m_in + c, p * m_out + f, f * n * m_in + off * m_in + c));
                }
            }
        }
    }
    out
}

fn weights(iota: f64, depth: usize) -> ObjectiveWeights {
    ObjectiveWeights {
        iota,
        l0: vec![0.0; depth],
        lambda: 0.3,
    }
}

fn finite_difference_gate(model: &MlcscModel, batch: &[Vec<f64>], codes: &[SparseVec], iota: f64) {
    let w = weights(iota, model.depth());
    let h = 1e-6;
    for i in 1..=model.depth() {
        let grad = dict_gradient(batch, model, codes, i, iota).unwrap();
        let layer = model.layer(i);
        let dense = layer.to_dense();
        assert_eq!(grad.len(), dense.len());
        let shifted = |coord: usize, delta: f64| {
            let mut d = dense.clone();
            d[coord] += delta;
            let l = ConvLayer::from_dense(layer.m_in(), layer.m_out(), layer.n(), layer.stride(), &d).unwrap();
            let mut layers = model.layers().to_vec();
            layers[i - 1] = l;
            objective_eval(batch, &model.with_layers(layers).unwrap(), codes, &w).unwrap()
        };
        for coord in 0..dense.len() {
            let fd = (shifted(coord, h) - shifted(coord, -h)) / (2.0 * h);
            let rel = (fd - grad[coord]).abs() / fd.abs().max(grad[coord].abs()).max(1e-8);
            assert!(rel <= 1e-4, "layer {i} coord {coord}: analytic {} vs fd {fd}", grad[coord]);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let layers = vec![
        dense_layer(&mut rng, 1, 2, 3, 1),
        dense_layer(&mut rng, 2, 3, 2, 1),
        dense_layer(&mut rng, 3, 2, 2, 1),
    ];
    let model = MlcscModel::new(layers, SignalGeometry::new(8, 1).unwrap(), vec![4, 4, 4]).unwrap();
    let batch: Vec<Vec<f64>> = (0..3).map(|_| gaussian(&mut rng, 8)).collect();
    let codes: Vec<SparseVec> = (0..3).map(|_| random_code(&mut rng, model.rep_geometry(3), 5)).collect();
    finite_difference_gate(&model, &batch, &codes, 0.01);
}

#[test]
fn strided_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let layers = vec![dense_layer(&mut rng, 2, 3, 4, 2), dense_layer(&mut rng, 3, 2, 3, 1)];
    let model = MlcscModel::new(layers, SignalGeometry::new(10, 2).unwrap(), vec![4, 4]).unwrap();
    let batch: Vec<Vec<f64>> = (0..2).map(|_| gaussian(&mut rng, 20)).collect();
    let codes: Vec<SparseVec> = (0..2).map(|_| random_code(&mut rng, model.rep_geometry(2), 4)).collect();
    finite_difference_gate(&model, &batch, &codes, 0.0);
}

#[test]
fn single_layer_gradient_matches_dense_outer_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let layer = dense_layer(&mut rng, 2, 3, 3, 1);
    let model = MlcscModel::new(vec![layer.clone()], SignalGeometry::new(9, 2).unwrap(), vec![3]).unwrap();
    let y = gaussian(&mut rng, 18);
    let code = random_code(&mut rng, model.rep_geometry(1), 6);
    let gamma = code.to_vec();
    let entries = matrix_entries(&layer, 9);
    let dense = layer.to_dense();
    let mut matrix = vec![vec![0.0; gamma.len()]; 18];
    for &(r, c, k) in &entries {
        matrix[r][c] += dense[k];
    }
    let residual: Vec<f64> = (0..18)
        .map(|r| matrix[r].iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>() - y[r])
        .collect();
    let mut want = vec![0.0; dense.len()];
    for &(r, c, k) in &entries {
        want[k] += 2.0 * residual[r] * gamma[c];
    }
    let got = dict_gradient(&[y], &model, &[code], 1, 0.0).unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-8);
    }
}

#[test]
fn zero_residual_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(54);
    let layers = vec![dense_layer(&mut rng, 1, 2, 3, 1), dense_layer(&mut rng, 2, 2, 2, 1)];
    let model = MlcscModel::new(layers, SignalGeometry::new(8, 1).unwrap(), vec![4, 4]).unwrap();
    let code = random_code(&mut rng, model.rep_geometry(2), 3);
    let y = model.effective(2).apply_vec(&code.to_vec());
    for i in 1..=2 {
        let g = dict_gradient(&[y.clone()], &model, &[code.clone()], i, 0.0).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-12));
    }
    assert!(dict_gradient(&[y], &model, &[code], 3, 0.0).is_err());
}

#[test]
fn objective_matches_dense_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let layers = vec![dense_layer(&mut rng, 1, 2, 3, 1), dense_layer(&mut rng, 2, 2, 2, 1)];
    let model = MlcscModel::new(layers.clone(), SignalGeometry::new(8, 1).unwrap(), vec![4, 4]).unwrap();
    let batch: Vec<Vec<f64>> = (0..3).map(|_| gaussian(&mut rng, 8)).collect();
    let codes: Vec<SparseVec> = (0..3).map(|_| random_code(&mut rng, model.rep_geometry(2), 4)).collect();
    let w = ObjectiveWeights {
        iota: 0.05,
        l0: vec![0.01, 0.02],
        lambda: 0.3,
    };

    let mut m1 = vec![vec![0.0; 16]; 8];
    for (r, c, k) in matrix_entries(&layers[0], 8) {
        m1[r][c] += layers[0].to_dense()[k];
    }
    let mut m2 = vec![vec![0.0; 16]; 16];
    for (r, c, k) in matrix_entries(&layers[1], 8) {
        m2[r][c] += layers[1].to_dense()[k];
    }
    let mut want = 0.0;
    for (y, code) in batch.iter().zip(&codes) {
        let g = code.to_vec();
        let mid: Vec<f64> = m2.iter().map(|row| row.iter().zip(&g).map(|(a, b)| a * b).sum()).collect();
        let x: Vec<f64> = m1.iter().map(|row| row.iter().zip(&mid).map(|(a, b)| a * b).sum()).collect();
        want += x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        want += 0.3 * g.iter().map(|v| v.abs()).sum::<f64>();
    }
    for (l, l0) in layers.iter().zip([0.01, 0.02]) {
        let d = l.to_dense();
        want += 0.05 * d.iter().map(|v| v * v).sum::<f64>();
        want += l0 * d.iter().filter(|v| **v != 0.0).count() as f64;
    }
    let got = objective_eval(&batch, &model, &codes, &w).unwrap();
    assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));

    let zero_codes: Vec<SparseVec> = codes.iter().map(|c| SparseVec::zeros(c.geometry())).collect();
    let plain = ObjectiveWeights { iota: 0.0, l0: vec![0.0, 0.0], lambda: 0.0 };
    let energy: f64 = batch.iter().flatten().map(|v| v * v).sum();
    assert!((objective_eval(&batch, &model, &zero_codes, &plain).unwrap() - energy).abs() <= 1e-12);
}

#[test]
fn keep_fraction_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    for _ in 0..20 {
        // Quantized magnitudes produce ties.
        let dense: Vec<f64> = (0..60).map(|_| (rng.random_range(-20..=20) as f64) / 4.0).collect();
        let got = threshold_kernels(&dense, 60, ZetaPolicy::KeepFraction(0.1));
        let mut order: Vec<usize> = (0..60).collect();
        order.sort_by(|&a, &b| dense[b].abs().total_cmp(&dense[a].abs()).then(a.cmp(&b)));
        let mut want = vec![0.0; 60];
        for &j in &order[..6] {
            want[j] = dense[j];
        }
        assert_eq!(got, want);
    }
    let layer = dense_layer(&mut rng, 3, 4, 5, 1);
    let thresholded = hard_threshold_dict(&layer, ZetaPolicy::KeepFraction(0.1)).unwrap();
    assert_eq!(thresholded.nnz(), 6);
    assert!(thresholded.is_normalized());
    let spikes = hard_threshold_dict(&layer, ZetaPolicy::KeepPerFilter(1)).unwrap();
    assert!(spikes.kernels().iter().all(|k| k.len() == 1 && (k[0].value.abs() - 1.0).abs() < 1e-12));
}

fn planted_data(rng: &mut ChaCha8Rng) -> (MlcscModel, Vec<Vec<f64>>) {
    let d1 = dense_layer(rng, 1, 3, 4, 1).normalize().unwrap();
    let d2 = hard_threshold_dict(&dense_layer(rng, 3, 4, 3, 1), ZetaPolicy::KeepFraction(0.3)).unwrap();
    let model = MlcscModel::new(vec![d1, d2], SignalGeometry::new(16, 1).unwrap(), vec![16, 16]).unwrap();
    let data = (0..40)
        .map(|_| {
            let code = random_code(rng, model.rep_geometry(2), 3);
            model.effective(2).apply_vec(&code.to_vec())
        })
        .collect();
    (model, data)
}

fn small_config() -> LearnConfig {
    LearnConfig {
        lambda: LambdaPolicy::Fixed(0.05),
        zetas: vec![ZetaPolicy::KeepFraction(0.3)],
        eta: 0.02,
        epochs: 2,
        batch_size: 8,
        seed: 9,
        ..LearnConfig::default()
    }
}

#[test]
fn zero_step_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(57);
    let (model, data) = planted_data(&mut rng);
    let config = LearnConfig { eta: 0.0, ..small_config() };
    let (out, trace) = train(&data, &model, &config).unwrap();
    assert_eq!(out, model);
    assert_eq!(trace.epochs.len(), 2);
}

#[test]
fn training_is_deterministic_and_keeps_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(58);
    let (model, data) = planted_data(&mut rng);
    let (a, trace_a) = train(&data, &model, &small_config()).unwrap();
    let (b, trace_b) = train(&data, &model, &small_config()).unwrap();
    assert_eq!(trace_a, trace_b);
    assert_eq!(a, b);
    for layer in a.layers() {
        assert!(layer.max_norm_deviation() <= 1e-10);
    }
    let total = a.layer(2).m_out() * a.layer(2).n() * a.layer(2).m_in();
    assert_eq!(a.layer(2).nnz(), (0.3 * total as f64).ceil() as usize);
    assert_eq!(trace_a.epochs.len(), 2);
}

#[test]
fn single_atom_data_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let layer = dense_layer(&mut rng, 1, 1, 4, 1).normalize().unwrap();
    let model = MlcscModel::new(vec![layer.clone()], SignalGeometry::new(16, 1).unwrap(), vec![2]).unwrap();
    let atom = model.effective(1).atom(0);
    let data = vec![atom; 10];
    let config = LearnConfig {
        lambda: LambdaPolicy::Fixed(1e-4),
        zetas: vec![],
        eta: 0.1,
        epochs: 3,
        batch_size: 5,
        ..LearnConfig::default()
    };
    let (out, trace) = train(&data, &model, &config).unwrap();
    assert!(trace.epochs.iter().all(|e| e.mean_fit <= 1e-6));
    let (a, b) = (layer.to_dense(), out.layer(1).to_dense());
    let sign = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().signum();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - sign * y).abs() <= 1e-3);
    }
}
