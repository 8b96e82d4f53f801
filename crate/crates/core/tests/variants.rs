use mvlstm::autodiff::{GradcheckOptions, Tape};
use mvlstm::cell::CellParams;
use mvlstm::head::HeadParams;
use mvlstm::init::{seeded, ModelRng};
use mvlstm::model::{mvindep_history, FusionParams, VanillaParams};
use mvlstm::pipeline::gradcheck_model;
use mvlstm::{Dims, Model, Tensor, VariantKind};
use rand::Rng;

fn random(shape: &[usize], rng: &mut ModelRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn random_cell(dims: Dims, rng: &mut ModelRng) -> CellParams {
    let mut p = CellParams::init(dims, rng);
    p.bj = random(p.bj.shape(), rng);
    p.b_gate = random(p.b_gate.shape(), rng);
    p
}

fn random_head(dims: Dims, rng: &mut ModelRng) -> HeadParams {
    let mut p = HeadParams::init(dims, rng);
    p.bs = random(p.bs.shape(), rng);
    p.bv = random(&[1], rng);
    p.bo = random(p.bo.shape(), rng);
    p
}

fn random_fusion(dims: Dims, rng: &mut ModelRng) -> FusionParams {
    let mut p = FusionParams::init(dims, rng);
    p.bs = random(p.bs.shape(), rng);
    p.bv = random(&[1], rng);
    p.b_out = random(&[1], rng);
    p
}

/// The fusion forecast assembled from separately tested pieces plus loops.
fn fusion_oracle(cell: &CellParams, f: &FusionParams, xs: &Tensor) -> f64 {
    let dims = cell.dims();
    let temporal = HeadParams {
        ws: f.ws.clone(),
        bs: f.bs.clone(),
        ..HeadParams::zeros(dims)
    };
    let history = cell.unroll(xs).unwrap().history;
    let ht = temporal.temporal_attention(&history).unwrap();
    let k = 2 * dims.d;
    let scores: Vec<f64> = (0..dims.n)
        .map(|v| {
            let s: f64 = (0..k).map(|j| f.wv.data()[j] * ht.data()[v * k + j]).sum();
            (s + f.bv.data()[0]).tanh()
        })
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let mut fused = vec![0.0; k];
    for v in 0..dims.n {
        for j in 0..k {
            fused[j] += scores[v].exp() / z * ht.data()[v * k + j];
        }
    }
    (0..k).map(|j| f.w_out.data()[j] * fused[j]).sum::<f64>() + f.b_out.data()[0]
}

#[test]
fn fusion_matches_loop_oracle() {
    let mut rng = seeded(41);
    for _ in 0..20 {
        let dims = Dims::new(rng.random_range(1..=4), rng.random_range(1..=4));
        let cell = random_cell(dims, &mut rng);
        let head = random_fusion(dims, &mut rng);
        let xs = random(&[rng.random_range(2..=6), dims.n], &mut rng);
        let want = fusion_oracle(&cell, &head, &xs);
        let model = Model::MvFusion { cell, head };
        assert!((model.predict(&xs).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn single_variable_fusion_is_a_linear_readout() {
    let mut rng = seeded(42);
    let dims = Dims::new(1, 3);
    let cell = random_cell(dims, &mut rng);
    let head = random_fusion(dims, &mut rng);
    let xs = random(&[4, 1], &mut rng);
    let temporal = HeadParams {
        ws: head.ws.clone(),
        bs: head.bs.clone(),
        ..HeadParams::zeros(dims)
    };
    let ht = temporal.temporal_attention(&cell.unroll(&xs).unwrap().history).unwrap();
    let linear = ht.dot(&head.w_out.reshape(&[1, 6]).unwrap()).unwrap() + head.b_out.data()[0];
    let model = Model::MvFusion { cell, head };
    assert!((model.predict(&xs).unwrap() - linear).abs() <= 1e-12);
}

#[test]
fn single_variable_indep_equals_mvlstm() {
    let mut rng = seeded(43);
    let dims = Dims::new(1, 4);
    let cell = random_cell(dims, &mut rng);
    let head = random_head(dims, &mut rng);
    let xs = random(&[5, 1], &mut rng);
    let a = Model::MvLstm {
        cell: cell.clone(),
        head: head.clone(),
    };
    let b = Model::MvIndep {
        cells: vec![cell],
        head,
    };
    assert_eq!(a.mixture_output(&xs, 0.3).unwrap(), b.mixture_output(&xs, 0.3).unwrap());
}

fn indep_history(cells: &[CellParams], xs: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let vars: Vec<_> = cells.iter().map(|c| c.register(&mut tape)).collect();
    let h = mvindep_history(&mut tape, &vars, xs).unwrap();
    tape.value(h).clone()
}

#[test]
fn indep_histories_are_fully_isolated() {
    let mut rng = seeded(44);
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let d = rng.random_range(1..=4);
        let steps = rng.random_range(2..=6);
        let cells: Vec<CellParams> = (0..n).map(|_| random_cell(Dims::new(1, d), &mut rng)).collect();
        let xs = random(&[steps, n], &mut rng);
        let m = rng.random_range(0..n);
        let mut moved = xs.clone();
        for t in 0..steps {
            moved.data_mut()[t * n + m] += rng.random_range(-2.0..2.0);
        }
        let (a, b) = (indep_history(&cells, &xs), indep_history(&cells, &moved));
        for t in 0..steps {
            for v in (0..n).filter(|&v| v != m) {
                let row = (t * n + v) * d..(t * n + v + 1) * d;
                assert_eq!(a.data()[row.clone()], b.data()[row]);
            }
        }
    }
}

#[test]
fn indep_is_the_composition_of_single_cells_and_head() {
    let mut rng = seeded(45);
    let (n, d, steps) = (3, 2, 5);
    let cells: Vec<CellParams> = (0..n).map(|_| random_cell(Dims::new(1, d), &mut rng)).collect();
    let head = random_head(Dims::new(n, d), &mut rng);
    let xs = random(&[steps, n], &mut rng);
    let mut history = Tensor::zeros(&[steps, n, d]);
    for (v, cell) in cells.iter().enumerate() {
        let column = Tensor::from_fn(&[steps, 1], |t| xs.data()[t * n + v]);
        let h = cell.unroll(&column).unwrap().history;
        for t in 0..steps {
            for k in 0..d {
                history.data_mut()[(t * n + v) * d + k] = h.data()[t * d + k];
            }
        }
    }
    let want = head.mixture_forward(&history, -0.2).unwrap();
    let model = Model::MvIndep { cells, head };
    let got = model.mixture_output(&xs, -0.2).unwrap().unwrap();
    for (a, b) in [
        (&got.mu, &want.mu),
        (&got.prior, &want.prior),
        (&got.posterior, &want.posterior),
    ] {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
    assert!((got.loglik - want.loglik).abs() <= 1e-12);
}

/// A plain LSTM whose candidate row block reproduces the single-variable
/// cell update `tanh(W_h h + W_x x + b_j)`.
fn vanilla_from_cell(cell: &CellParams, w_out: &Tensor, b_out: f64) -> VanillaParams {
    let d = cell.wx.shape()[1];
    let cols = 1 + d;
    let mut w_gate = Tensor::zeros(&[4 * d, cols]);
    w_gate.data_mut()[..3 * d * cols].copy_from_slice(cell.w_gate.data());
    for i in 0..d {
        let row = (3 * d + i) * cols;
        w_gate.data_mut()[row] = cell.wx.data()[i];
        w_gate.data_mut()[row + 1..row + cols].copy_from_slice(&cell.wh.data()[i * d..(i + 1) * d]);
    }
    let mut b_gate = cell.b_gate.data().to_vec();
    b_gate.extend_from_slice(cell.bj.data());
    VanillaParams {
        w_gate,
        b_gate: Tensor::vector(b_gate),
        w_out: w_out.clone(),
        b_out: Tensor::vector(vec![b_out]),
    }
}

#[test]
fn vanilla_matches_single_variable_cell() {
    let mut rng = seeded(46);
    for _ in 0..20 {
        let d = rng.random_range(1..=5);
        let cell = random_cell(Dims::new(1, d), &mut rng);
        let w_out = random(&[d], &mut rng);
        let b_out = rng.random_range(-1.0..1.0);
        let xs = random(&[rng.random_range(2..=7), 1], &mut rng);
        let h = cell.unroll(&xs).unwrap().final_state.h;
        let want = h.reshape(&[d]).unwrap().dot(&w_out).unwrap() + b_out;
        let model = Model::Vanilla(vanilla_from_cell(&cell, &w_out, b_out));
        assert!((model.predict(&xs).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn every_variant_passes_gradcheck() {
    for kind in VariantKind::ALL {
        let report = gradcheck_model(kind, Dims::new(3, 4), 5, 0, GradcheckOptions::default()).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{kind}: {report:?}");
    }
}

#[test]
fn squared_error_losses_for_point_forecasters() {
    let mut rng = seeded(47);
    let xs = random(&[4, 3], &mut rng);
    for kind in [VariantKind::MvFusion, VariantKind::Vanilla] {
        let model = Model::init(kind, Dims::new(3, 2), &mut rng);
        let yhat = model.predict(&xs).unwrap();
        let (loss, _) = model.sequence_gradients(&xs, 1.5, None).unwrap();
        assert!((loss - (1.5 - yhat).powi(2)).abs() <= 1e-12);
    }
}
