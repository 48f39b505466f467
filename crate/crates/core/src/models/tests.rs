use rand::Rng;

use super::*;
use crate::graph::build_scaled_laplacian;
use crate::nn::ParamStore;
use crate::tensor::seeded_rng;

fn random_input<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = seeded_rng(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

#[test]
fn parameter_counts_match_reported_sizes() {
    let default = KogTransformerConfig::default();
    let mini = KogTransformerConfig::mini();
    let d = default.parameter_count() as f64;
    let m = mini.parameter_count() as f64;
    assert!((d - 1.99e6).abs() / 1.99e6 <= 0.10, "default {d}");
    assert!((m - 0.54e6).abs() / 0.54e6 <= 0.10, "mini {m}");

    let body = SkeletonGraph::human36m_16();
    let model = KogTransformer::<f32>::new(&body, mini.clone(), 0).unwrap();
    assert_eq!(model.store().count(), mini.parameter_count());
    let model = KogTransformer::<f32>::new(&body, default.clone(), 0).unwrap();
    assert_eq!(model.store().count(), default.parameter_count());
}

#[test]
fn default_model_layer_audit() {
    let model = KogTransformer::<f32>::new(&SkeletonGraph::human36m_16(), Default::default(), 0).unwrap();
    assert_eq!(model.kog_count(), 10);
    assert_eq!(model.gr_count(), 5);
    assert_eq!(model.mlp_count(), 5);
    let fusion = model.fusion_weights();
    assert_eq!(fusion.len(), 10);
    assert_eq!(fusion[0].0, "1-1");
    assert_eq!(fusion[9].0, "5-2");
    assert!(fusion.iter().all(|(_, c)| c.len() == 5));
}

#[test]
fn lifting_shapes_and_eval_determinism() {
    let model = Model::<f32>::Kog(
        KogTransformer::new(&SkeletonGraph::human36m_16(), Default::default(), 3).unwrap(),
    );
    let x = random_input::<f32>(&[64, 16, 2], 1);
    let a = model.predict(&x).unwrap();
    assert_eq!(a.shape(), &[64, 16, 3]);
    let b = model.predict(&x).unwrap();
    assert_eq!(a.data(), b.data());
    assert!(model.predict(&random_input::<f32>(&[2, 15, 2], 1)).is_err());
}

#[test]
fn training_mode_is_stochastic_and_seeded() {
    let model = KogTransformer::<f64>::new(
        &SkeletonGraph::human36m_16(),
        KogTransformerConfig {
            num_layers: 1,
            dim: 16,
            ..KogTransformerConfig::default()
        },
        3,
    )
    .unwrap();
    let x = random_input::<f64>(&[2, 16, 2], 4);
    let run = |seed| {
        let tape = Tape::training(seed);
        let p = model.store().bind(&tape);
        model.forward(&p, tape.constant(&x)).unwrap().value()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn config_validation() {
    let bad = KogTransformerConfig {
        heads: 3,
        ..KogTransformerConfig::default()
    };
    assert!(bad.validate().is_err());
    let wrong_joints = KogTransformer::<f32>::new(&SkeletonGraph::hand_21(), Default::default(), 0);
    assert!(wrong_joints.is_err());

    let mut g = GaseNetConfig {
        schedule: vec![21, 48, 48, 192, 389, 778],
        ..GaseNetConfig::default()
    };
    assert!(g.validate().is_err());
    g.schedule = vec![21, 48, 96];
    assert!(g.validate().is_err());
}

fn dense(n: usize, data: &[f64]) -> Vec<Vec<f64>> {
    data.chunks(n).map(|r| r.to_vec()).collect()
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

#[test]
fn chebyshev_conv_matches_matrix_polynomial() {
    let graph = SkeletonGraph::chain(3).unwrap();
    let lap = build_scaled_laplacian(&graph);
    for order in 1..=3 {
        let mut rng = seeded_rng(order as u64);
        let mut store = ParamStore::<f64>::new();
        let conv = ChebConv::new(&mut store, &mut rng, "cheb", 2, 2, order).unwrap();
        store.get_mut(conv.bias).data_mut().copy_from_slice(&[0.25, -0.5]);
        let x = random_input::<f64>(&[1, 3, 2], 9);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let y = conv.forward(&p, tape.constant(&x), &lap).unwrap().value();

        // explicit polynomials: T0 = I, T1 = L, T2 = 2 L^2 - I
        let l = dense(3, lap.as_slice());
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| (i == j) as u8 as f64).collect()).collect();
        let l2 = mm(&l, &l);
        let t2: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| 2.0 * l2[i][j] - eye[i][j]).collect())
            .collect();
        let polys = [eye, l, t2];
        let xm = dense(2, &x.to_f64_vec());
        let mut expect = vec![vec![0.25, -0.5]; 3];
        for (k, poly) in polys.iter().enumerate().take(order) {
            let theta = dense(2, &store.get(conv.weights[k]).to_f64_vec());
            let term = mm(&mm(poly, &xm), &theta);
            for i in 0..3 {
                for j in 0..2 {
                    expect[i][j] += term[i][j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..2 {
                assert!((y.data()[i * 2 + j] - expect[i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn chebyshev_zero_input_gives_bias() {
    let graph = SkeletonGraph::hand_21();
    let lap = build_scaled_laplacian(&graph);
    let mut rng = seeded_rng(0);
    let mut store = ParamStore::<f64>::new();
    let conv = ChebConv::new(&mut store, &mut rng, "cheb", 3, 4, 2).unwrap();
    store.get_mut(conv.bias).data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
    let tape = Tape::new();
    let p = store.bind(&tape);
    let y = conv
        .forward(&p, tape.constant(&Tensor::zeros(&[2, 21, 3])), &lap)
        .unwrap()
        .value();
    for row in y.data().chunks(4) {
        assert_eq!(row, &[1.0, 2.0, 3.0, 4.0]);
    }
    assert!(ChebConv::new(&mut store, &mut rng, "zero", 3, 4, 0).is_err());
}

#[test]
fn gra_attention_reductions() {
    let mut rng = seeded_rng(12);
    let mut store = ParamStore::<f64>::new();
    let attn = GraAttention::new(&mut store, &mut rng, "ga", 3, 4, 0.0).unwrap();
    let x = random_input::<f64>(&[1, 3, 4], 2);

    // zero bias: plain scaled dot-product attention
    let tape = Tape::new();
    let p = store.bind(&tape);
    let y = attn.attend(&p, tape.constant(&x)).unwrap().value();
    let xm = dense(4, &x.to_f64_vec());
    let q = mm(&xm, &dense(4, &store.get(attn.w_query).to_f64_vec()));
    let k = mm(&xm, &dense(4, &store.get(attn.w_key).to_f64_vec()));
    let v = mm(&xm, &dense(4, &store.get(attn.w_value).to_f64_vec()));
    for m in 0..3 {
        let logits: Vec<f64> = (0..3)
            .map(|n| q[m].iter().zip(&k[n]).map(|(a, b)| a * b).sum::<f64>() / 2.0)
            .collect();
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        for j in 0..4 {
            let expect: f64 = (0..3).map(|n| e[n] / s * v[n][j]).sum();
            assert!((y.data()[m * 4 + j] - expect).abs() < 1e-12);
        }
    }

    // a bias gap of 10 concentrates the weight on the favoured column
    for id in [attn.w_query, attn.w_key] {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let bias = store.get_mut(attn.score_bias).data_mut();
    bias.copy_from_slice(&[-10.0, 0.0, -10.0, -10.0, -10.0, 0.0, 0.0, -10.0, -10.0]);
    let tape = Tape::new();
    let p = store.bind(&tape);
    let xv = tape.constant(&x);
    let q = xv.matmul(p.var(attn.w_query)).unwrap();
    let k = xv.matmul(p.var(attn.w_key)).unwrap();
    let weights = q
        .bmm_t(k)
        .unwrap()
        .add_tiled(p.var(attn.score_bias))
        .unwrap()
        .softmax()
        .value();
    let favoured = [1, 2, 0];
    for (m, &f) in favoured.iter().enumerate() {
        assert!(weights.data()[m * 3 + f] >= 0.99);
    }
    let out = attn.attend(&p, xv).unwrap().value();
    assert_eq!(out.shape(), &[1, 3, 4]);
    let wrong = tape.constant(&Tensor::<f64>::zeros(&[1, 4, 4]));
    assert!(attn.attend(&p, wrong).is_err());
}

#[test]
fn upsampling_hand_example_and_identity() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(&Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = tape.constant(&Tensor::from_f64(&[3, 2], &[2.0, 0.0, 1.0, -1.0, 0.5, 0.5]).unwrap());
    let y = upsample_nodes(x, w).unwrap().value();
    assert_eq!(y.data(), &[2.0, 4.0, -2.0, -2.0, 2.0, 3.0]);

    let eye = tape.constant(&Tensor::from_f64(&[4, 2], &[1.0, 0.0, 0.0, 1.0, 0.3, 0.1, -2.0, 5.0]).unwrap());
    let y = upsample_nodes(x, eye).unwrap().value();
    assert_eq!(&y.data()[..4], x.value().data());

    let shrink = tape.constant(&Tensor::from_f64(&[1, 2], &[1.0, 1.0]).unwrap());
    assert!(upsample_nodes(x, shrink).is_err());
    let mut store = ParamStore::<f64>::new();
    assert!(NodeUpsample::new(&mut store, &mut seeded_rng(0), "up", 4, 4).is_err());
}

#[test]
fn gase_net_hand_shapes_and_growth() {
    let hand = SkeletonGraph::hand_21();
    let net = GaseNet::<f32>::new(&hand, GaseNetConfig::default(), 0).unwrap();
    let tape = Tape::new();
    let p = net.store().bind(&tape);
    let x = tape.constant(&random_input::<f32>(&[2, 21, 3], 5));
    let (y, trace) = net.forward_trace(&p, x).unwrap();
    assert_eq!(y.shape(), vec![2, 778, 3]);
    assert_eq!(trace, vec![21, 48, 96, 192, 389, 778]);
    assert!(trace.windows(2).all(|w| w[1] > w[0]));

    let model = Model::Gase(net);
    let zero = model.predict(&Tensor::zeros(&[1, 21, 3])).unwrap();
    assert!(zero.is_finite());
    let probe = random_input::<f32>(&[1, 21, 3], 8);
    assert_eq!(model.predict(&probe).unwrap(), model.predict(&probe).unwrap());
}
