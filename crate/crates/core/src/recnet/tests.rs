use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{compare, relative_error, tape_fn};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise(batch: usize, dim: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(&[batch, dim], |_| r.random_range(-1.5..1.5))
}

fn dims(v: usize, e: usize, h: usize) -> ModelDims {
    ModelDims::new(v, e, h)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-loop GRU for a single example.
fn scalar_gru(p: &GruParams<f64>, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = h.len();
    let lin = |w: &Tensor<f64>, u: &Tensor<f64>, b: &Tensor<f64>, hin: &[f64], j: usize| {
        let mut s = b.data()[j];
        for (i, xv) in x.iter().enumerate() {
            s += xv * w.at(i, j);
        }
        for (i, hv) in hin.iter().enumerate() {
            s += hv * u.at(i, j);
        }
        s
    };
    let z: Vec<f64> = (0..hd).map(|j| sigmoid(lin(&p.w_z, &p.u_z, &p.b_z, h, j))).collect();
    let r: Vec<f64> = (0..hd).map(|j| sigmoid(lin(&p.w_r, &p.u_r, &p.b_r, h, j))).collect();
    let rh: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a * b).collect();
    (0..hd)
        .map(|j| {
            let cand = lin(&p.w_h, &p.u_h, &p.b_h, &rh, j).tanh();
            (1.0 - z[j]) * h[j] + z[j] * cand
        })
        .collect()
}

#[test]
fn zero_gru_halves_the_state() {
    let p = GruParams::<f64>::zeros(3, 4);
    let x = Tensor::from_fn(&[2, 3], |i| i as f64);
    let h = Tensor::from_fn(&[2, 4], |i| i as f64 / 10.0 - 0.3);
    let out = gru_step(&p, &x, &h).unwrap();
    for (o, hv) in out.data().iter().zip(h.data()) {
        assert!((o - 0.5 * hv).abs() < 1e-15);
    }
}

#[test]
fn gru_matches_scalar_loop_and_stays_in_range() {
    let mut r = rng(1);
    for _ in 0..20 {
        let mut p = GruParams::<f64>::init(3, 2, &mut r);
        p.b_z = Tensor::from_fn(&[1, 2], |_| r.random_range(-1.0..1.0));
        p.b_h = Tensor::from_fn(&[1, 2], |_| r.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        let h: Vec<f64> = (0..2).map(|_| r.random_range(-0.99..0.99)).collect();
        let got = gru_step(&p, &Tensor::row(x.clone()).unwrap(), &Tensor::row(h.clone()).unwrap()).unwrap();
        let want = scalar_gru(&p, &x, &h);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
            assert!(g.abs() < 1.0);
        }
    }
}

#[test]
fn free_generation_emits_distributions_of_every_length() {
    let mut r = rng(2);
    let g = GeneratorParams::<f64>::init(&dims(6, 5, 4), &mut r).unwrap();
    let z = noise(3, 4, &mut r);
    for len in [1, 2, 7, 20] {
        let out = generate_free(&g, &z, len).unwrap();
        assert_eq!(out.to_tensor().unwrap().shape(), &[3, len, 6]);
        assert!(out.max_row_sum_error() < 1e-12);
        assert!(out.steps().iter().all(|s| s.data().iter().all(|&p| p >= 0.0)));
    }
    assert!(generate_free(&g, &z, 0).is_err());
    assert_eq!(generate_free(&g, &z, 5).unwrap(), generate_free(&g, &z, 5).unwrap());
}

#[test]
fn noise_projection_and_dimension_checks() {
    let mut r = rng(3);
    let mut d = dims(5, 4, 6);
    d.noise = 3;
    assert!(GeneratorParams::<f64>::init(&d, &mut r).is_err());
    d.noise_proj = true;
    let g = GeneratorParams::<f64>::init(&d, &mut r).unwrap();
    assert_eq!(g.dims(), d);
    g.check().unwrap();
    let out = generate_free(&g, &noise(2, 3, &mut r), 4).unwrap();
    assert_eq!(out.batch_size(), 2);
}

#[test]
fn generator_gradient_wrt_embedding_matches_finite_differences() {
    let mut r = rng(4);
    let g = GeneratorParams::<f64>::init(&dims(4, 3, 5), &mut r).unwrap();
    let z = noise(2, 5, &mut r);
    let base = g.clone();
    let f = tape_fn(move |t: &Tape<f64>, v: &[Var<'_, f64>]| {
        let mut vars = base.bind(t, false);
        vars.embed = v[0];
        let outs = vars.unroll(&z, 3, Feed::Free)?;
        let stacked = t.concat_cols(&outs)?;
        let w = Tensor::from_fn(&stacked.shape(), |i| ((i * 7) % 5) as f64 - 2.0);
        stacked.mul(t.constant(w))?.mean()
    });
    for (a, n) in compare(&f, std::slice::from_ref(&g.embed), 1e-5).unwrap() {
        let err = relative_error(&a, &n, 1e-8);
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn teacher_helping_with_empty_prefix_is_first_free_step() {
    let mut r = rng(5);
    let g = GeneratorParams::<f64>::init(&dims(5, 4, 4), &mut r).unwrap();
    let z = noise(3, 4, &mut r);
    let th = generate_th(&g, &z, &CharSeqBatch::empty(3, 5)).unwrap();
    let free = generate_free(&g, &z, 1).unwrap();
    assert_eq!(&th, free.step(0));
}

#[test]
fn one_hot_weighted_embedding_is_row_lookup() {
    let mut r = rng(6);
    let embed = Tensor::<f64>::from_fn(&[5, 3], |_| r.random_range(-1.0..1.0));
    let t = Tape::new();
    let onehot = CharSeqBatch::<f64>::from_ids(&[vec![3], vec![0]], 5).unwrap();
    let e = t.constant(onehot.step(0).clone()).embedding_lookup_weighted(t.constant(embed.clone())).unwrap();
    assert_eq!(e.value().row_slice(0), embed.row_slice(3));
    assert_eq!(e.value().row_slice(1), embed.row_slice(0));
}

#[test]
fn soft_prefix_is_rejected() {
    let mut r = rng(7);
    let g = GeneratorParams::<f64>::init(&dims(3, 2, 2), &mut r).unwrap();
    let soft = CharSeqBatch::from_steps(vec![Tensor::filled(&[1, 3], 1.0 / 3.0)]).unwrap();
    assert!(matches!(generate_th(&g, &noise(1, 2, &mut r), &soft), Err(Error::SoftPrefix)));
}

#[test]
fn teacher_helping_agrees_with_saturated_free_running() {
    // Large output weights make every softmax nearly one-hot, so feeding back
    // the argmax decoding as a real prefix reproduces free-running inputs.
    let mut r = rng(8);
    let mut g = GeneratorParams::<f64>::init(&dims(2, 3, 3), &mut r).unwrap();
    g.out_proj = Tensor::matrix(3, 2, vec![900.0, -900.0, -900.0, 900.0, 600.0, -600.0]).unwrap();
    let z = noise(4, 3, &mut r);
    let len = 5;
    let free = generate_free(&g, &z, len).unwrap();
    let ids = free.argmax_ids();
    let prefix: Vec<Vec<usize>> = ids.iter().map(|row| row[..len - 1].to_vec()).collect();
    let prefix = CharSeqBatch::from_ids(&prefix, 2).unwrap();
    let th = generate_th(&g, &z, &prefix).unwrap();
    // direct recompute: the last free step
    let diff = th.max_abs_diff(free.step(len - 1));
    assert!(diff < 1e-9, "{diff}");
}

#[test]
fn zero_discriminator_scores_its_bias() {
    let d = dims(4, 3, 5);
    let mut p = DiscriminatorParams::<f64>::zeros(&d);
    p.score_bias = Tensor::scalar(0.75);
    let batch = CharSeqBatch::from_ids(&[vec![0, 1, 2], vec![3, 3, 3]], 4).unwrap();
    let s = discriminate(&p, &batch).unwrap();
    assert_eq!(s.shape(), &[2, 1]);
    assert!(s.data().iter().all(|&v| v == 0.75));
}

#[test]
fn soft_and_one_hot_inputs_score_differently() {
    let mut r = rng(9);
    let p = DiscriminatorParams::<f64>::init(&dims(3, 4, 4), &mut r).unwrap();
    let hard = CharSeqBatch::from_ids(&[vec![0, 2]], 3).unwrap();
    let soft = CharSeqBatch::from_steps(vec![
        Tensor::row(vec![0.8, 0.1, 0.1]).unwrap(),
        Tensor::row(vec![0.1, 0.1, 0.8]).unwrap(),
    ])
    .unwrap();
    assert_eq!(hard.argmax_ids(), soft.argmax_ids());
    let (a, b) = (discriminate(&p, &hard).unwrap(), discriminate(&p, &soft).unwrap());
    assert!((a.item() - b.item()).abs() > 1e-6);
}

#[test]
fn discriminator_input_gradient_matches_finite_differences() {
    let mut r = rng(10);
    let p = DiscriminatorParams::<f64>::init(&dims(4, 3, 5), &mut r).unwrap();
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[2, 4], |_| r.random_range(0.0..1.0))).collect();
    let f = tape_fn(move |t: &Tape<f64>, v: &[Var<'_, f64>]| p.bind(t, false).score(v, None)?.sum());
    for (a, n) in compare(&f, &xs, 1e-5).unwrap() {
        assert!(relative_error(&a, &n, 1e-8) < 1e-4);
    }
}

#[test]
fn masked_readout_equals_truncated_sequences() {
    let mut r = rng(11);
    let p = DiscriminatorParams::<f64>::init(&dims(4, 3, 5), &mut r).unwrap();
    let ids = vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0], vec![1, 1, 2, 2]];
    let lengths = [2, 4, 1];
    let full = CharSeqBatch::<f64>::from_ids(&ids, 4).unwrap();
    let t = Tape::new();
    let xs: Vec<_> = full.steps().iter().map(|s| t.constant(s.clone())).collect();
    let masked = p.bind(&t, false).score(&xs, Some(&lengths)).unwrap().value();
    for (b, &l) in lengths.iter().enumerate() {
        let one = CharSeqBatch::from_ids(&[ids[b][..l].to_vec()], 4).unwrap();
        let s = discriminate(&p, &one).unwrap();
        assert!((s.item() - masked.data()[b]).abs() < 1e-12);
    }
}

#[test]
fn decode_argmax_cases() {
    let v = Vocab::from_chars(vec!['x', 'y', 'z']);
    let b = CharSeqBatch::<f32>::from_ids(&[v.encode("xzy"), v.encode("zzx")], v.len()).unwrap();
    assert_eq!(decode_argmax(&b, &v), vec!["xzy", "zzx"]);

    let uniform = CharSeqBatch::from_steps(vec![Tensor::<f32>::filled(&[1, 3], 1.0 / 3.0)]).unwrap();
    assert_eq!(uniform.argmax_ids(), vec![vec![0]]);

    let mut r = rng(12);
    let steps: Vec<Tensor<f64>> = (0..6).map(|_| Tensor::from_fn(&[5, 4], |_| r.random_range(0.0..1.0))).collect();
    let batch = CharSeqBatch::from_steps(steps.clone()).unwrap();
    let ids = batch.argmax_ids();
    assert_eq!(ids.len(), 5);
    for (b, row_ids) in ids.iter().enumerate() {
        for (t, s) in steps.iter().enumerate() {
            let row = s.row_slice(b);
            let mut best = 0;
            for i in 1..row.len() {
                if row[i] > row[best] {
                    best = i;
                }
            }
            assert_eq!(row_ids[t], best);
        }
    }
}

#[test]
fn end_to_end_generator_gradients_match_finite_differences() {
    let mut r = rng(13);
    let d = dims(3, 2, 3);
    let g = GeneratorParams::<f64>::init(&d, &mut r).unwrap();
    let disc = DiscriminatorParams::<f64>::init(&d, &mut r).unwrap();
    let z = noise(2, 3, &mut r);
    let template = g.clone();
    let f = tape_fn(move |t: &Tape<f64>, v: &[Var<'_, f64>]| {
        let mut p = template.clone();
        for (slot, var) in p.tensors_mut().into_iter().zip(v) {
            *slot = (*var.value()).clone();
        }
        let mut vars = p.bind(t, false);
        // swap in the leaf variables so gradients reach them
        let all = v.to_vec();
        rebind(&mut vars, &all);
        let outs = vars.unroll(&z, 3, Feed::Free)?;
        disc.bind(t, false).score(&outs, None)?.mean()
    });
    let inputs: Vec<Tensor<f64>> = g.named().into_iter().map(|(_, t)| t.clone()).collect();
    for (a, n) in compare(&f, &inputs, 1e-5).unwrap() {
        let err = relative_error(&a, &n, 1e-7);
        assert!(err < 1e-3, "{err}");
    }
}

fn rebind<'t>(vars: &mut GeneratorVars<'t, f64>, v: &[Var<'t, f64>]) {
    let g = &mut vars.gru;
    [g.w_z, g.w_r, g.w_h, g.u_z, g.u_r, g.u_h, g.b_z, g.b_r, g.b_h] =
        [v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]];
    vars.embed = v[9];
    vars.out_proj = v[10];
    vars.out_bias = v[11];
    vars.sos = v[12];
}
