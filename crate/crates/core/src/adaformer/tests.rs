use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;
use crate::geometry::ball_query_topk;
use crate::verify::{composite_check, randomize};

fn random_cloud(rng: &mut Xoshiro256PlusPlus, n: usize, extent: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                )
            })
            .collect(),
    )
}

fn rand_tensor(rng: &mut Xoshiro256PlusPlus, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn zero_regression_gives_identity_params() {
    let mut store = ParamStore::new(3);
    let reg = GroupRegression::new(&mut store, "r", 4, 8).unwrap();
    store.zero_all();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::full(&[5, 7], 0.3));
    assert_eq!(reg.regress(&mut g, x).unwrap(), DeformParams::IDENTITY);
}

#[test]
fn regression_is_member_permutation_invariant() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
    let mut store = ParamStore::new(3);
    let reg = GroupRegression::new(&mut store, "r", 4, 8).unwrap();
    randomize(&mut store, 5, 0.5);
    let x = rand_tensor(&mut rng, &[5, 7]);
    let perm = [3usize, 0, 4, 1, 2];
    let xp = Tensor::new(
        vec![5, 7],
        perm.iter().flat_map(|&i| x.row(i).to_vec()).collect(),
    )
    .unwrap();
    let mut g = Graph::new(&store);
    let a = g.constant(x);
    let b = g.constant(xp);
    let pa = reg.regress(&mut g, a).unwrap();
    let pb = reg.regress(&mut g, b).unwrap();
    for i in 0..3 {
        assert!((pa.scale[i] - pb.scale[i]).abs() < 1e-12);
        assert!((pa.angle[i] - pb.angle[i]).abs() < 1e-12);
    }
}

#[test]
fn regression_gradcheck_through_transform() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
    let mut store = ParamStore::new(3);
    let reg = GroupRegression::new(&mut store, "r", 4, 8).unwrap();
    randomize(&mut store, 7, 0.4);
    let x = rand_tensor(&mut rng, &[12, 7]);
    let rel = rand_tensor(&mut rng, &[12, 3]);
    let readout = rand_tensor(&mut rng, &[12, 3]);
    let row = composite_check("regress", &store, &x, usize::MAX, |g, xv| {
        let raw = reg.raw(g, xv, 4)?;
        let off = g.deform_offsets(raw, &rel, 4)?;
        let r = g.constant(readout.clone());
        let p = g.mul(off, r)?;
        Ok(g.sum_all(p))
    })
    .unwrap();
    assert!(row.max_rel_error < 1e-5, "{}", row.max_rel_error);
}

#[test]
fn position_embed_zero_cases() {
    let mut store = ParamStore::new(1);
    let pe = PositionEmbedding::new(&mut store, "p", 8, 4).unwrap();
    let c = Vec3::new(1.0, 2.0, 3.0);
    {
        // zero input with zero biases stays zero even with random weights
        let mut g = Graph::new(&store);
        let e = pe.embed(&mut g, c, &[c]).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));
    }
    store.zero_all();
    let mut g = Graph::new(&store);
    let e = pe
        .embed(&mut g, c, &[Vec3::ZERO, Vec3::new(5.0, -1.0, 0.0)])
        .unwrap();
    assert_eq!(g.shape(e), &[2, 4]);
    assert!(g.value(e).data().iter().all(|&v| v == 0.0));
    assert!(pe.embed(&mut g, c, &[]).is_err());
}

#[test]
fn position_embed_gradcheck() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(10);
    let mut store = ParamStore::new(1);
    let pe = PositionEmbedding::new(&mut store, "p", 8, 4).unwrap();
    randomize(&mut store, 2, 0.6);
    let x = rand_tensor(&mut rng, &[6, 3]);
    let readout = rand_tensor(&mut rng, &[6, 4]);
    let row = composite_check("pos", &store, &x, usize::MAX, |g, xv| {
        let y = pe.forward(g, xv)?;
        let r = g.constant(readout.clone());
        let p = g.mul(y, r)?;
        Ok(g.sum_all(p))
    })
    .unwrap();
    assert!(row.max_rel_error < 1e-6, "{}", row.max_rel_error);
}

fn attn_fixture() -> (ParamStore, VectorAttention) {
    let mut store = ParamStore::new(12);
    let va = VectorAttention::new(&mut store, "a", 3, 4).unwrap();
    randomize(&mut store, 13, 0.8);
    (store, va)
}

fn eval_attn(
    store: &ParamStore,
    va: &VectorAttention,
    q: &Tensor,
    keys: &Tensor,
    vals: &Tensor,
    pos: &Tensor,
) -> Vec<f64> {
    let k = keys.rows();
    let mut g = Graph::new(store);
    let (qv, kv, vv, pv) = (
        g.constant(q.clone()),
        g.constant(keys.clone()),
        g.constant(vals.clone()),
        g.constant(pos.clone()),
    );
    let out = va.forward(&mut g, qv, kv, vv, pv, k).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn attention_single_member_is_value_plus_pos() {
    let (store, va) = attn_fixture();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
    let (q, k, v, p) = (
        rand_tensor(&mut rng, &[1, 3]),
        rand_tensor(&mut rng, &[1, 3]),
        rand_tensor(&mut rng, &[1, 3]),
        rand_tensor(&mut rng, &[1, 4]),
    );
    let out = eval_attn(&store, &va, &q, &k, &v, &p);
    let mut g = Graph::new(&store);
    let vv = g.constant(v);
    let proj = va.value.forward(&mut g, vv).unwrap();
    let expected: Vec<f64> = g
        .value(proj)
        .data()
        .iter()
        .zip(p.data())
        .map(|(a, b)| a + b)
        .collect();
    for (a, b) in out.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_duplicate_member_and_permutation() {
    let (store, va) = attn_fixture();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
    let q = rand_tensor(&mut rng, &[1, 3]);
    let k1 = rand_tensor(&mut rng, &[1, 3]);
    let v1 = rand_tensor(&mut rng, &[1, 3]);
    let p1 = rand_tensor(&mut rng, &[1, 4]);
    let dup =
        |t: &Tensor| Tensor::new(vec![2, t.row_len()], [t.data(), t.data()].concat()).unwrap();
    let single = eval_attn(&store, &va, &q, &k1, &v1, &p1);
    let double = eval_attn(&store, &va, &q, &dup(&k1), &dup(&v1), &dup(&p1));
    for (a, b) in single.iter().zip(&double) {
        assert!((a - b).abs() < 1e-12);
    }

    let (keys, vals, pos) = (
        rand_tensor(&mut rng, &[5, 3]),
        rand_tensor(&mut rng, &[5, 3]),
        rand_tensor(&mut rng, &[5, 4]),
    );
    let perm = [4usize, 2, 0, 3, 1];
    let permute = |t: &Tensor| {
        Tensor::new(
            t.shape().to_vec(),
            perm.iter().flat_map(|&i| t.row(i).to_vec()).collect(),
        )
        .unwrap()
    };
    let a = eval_attn(&store, &va, &q, &keys, &vals, &pos);
    let b = eval_attn(
        &store,
        &va,
        &q,
        &permute(&keys),
        &permute(&vals),
        &permute(&pos),
    );
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn attention_rejects_empty_group() {
    let (store, va) = attn_fixture();
    let mut g = Graph::new(&store);
    let q = g.constant(Tensor::zeros(&[1, 4]));
    assert!(va.attend(&mut g, q, q, q, q, 0).is_err());
}

fn block_fixture(
    seed: u64,
    n: usize,
    k: usize,
    dim: usize,
) -> (ParamStore, AdaFormerBlock, PointCloud, Tensor) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut store = ParamStore::new(seed);
    let cfg = BlockConfig {
        in_dim: dim,
        out_dim: dim,
        k,
        radius: 0.8,
    };
    let block = AdaFormerBlock::new(&mut store, "b", &cfg, 6).unwrap();
    randomize(&mut store, seed + 1, 0.5);
    let cloud = random_cloud(&mut rng, n, 0.6);
    let feats = rand_tensor(&mut rng, &[n, dim]);
    (store, block, cloud, feats)
}

#[test]
fn zero_block_single_center_is_zero() {
    let (mut store, block, cloud, feats) = block_fixture(3, 6, 1, 4);
    store.zero_all();
    let mut g = Graph::new(&store);
    let f = g.constant(feats);
    let out = block.forward(&mut g, &cloud, f, &[2]).unwrap();
    assert_eq!(g.shape(out.feats), &[1, 4]);
    assert!(g.value(out.feats).data().iter().all(|&v| v == 0.0));
}

#[test]
fn block_gradcheck_small() {
    let (store, block, cloud, feats) = block_fixture(17, 8, 4, 4);
    let centers = [0usize, 3, 5];
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(99);
    let readout = rand_tensor(&mut rng, &[3, 4]);
    let row = composite_check("block", &store, &feats, usize::MAX, |g, xv| {
        let out = block.forward(g, &cloud, xv, &centers)?;
        let r = g.constant(readout.clone());
        let p = g.mul(out.feats, r)?;
        Ok(g.sum_all(p))
    })
    .unwrap();
    assert!(row.passed(), "block rel err {:e}", row.max_rel_error);
}

#[test]
fn zeroed_regression_equals_fixed_ball_block() {
    let (mut store, block, cloud, feats) = block_fixture(21, 30, 6, 5);
    store.zero_prefix("b.regress");
    let mut fixed = block.clone();
    fixed.deform_enabled = false;
    let centers = [0usize, 7, 12, 29];
    let mut g = Graph::new(&store);
    let f = g.constant(feats);
    let a = block.forward(&mut g, &cloud, f, &centers).unwrap();
    let b = fixed.forward(&mut g, &cloud, f, &centers).unwrap();
    assert_eq!(a.groups, b.groups);
    assert_eq!(g.value(a.feats).data(), g.value(b.feats).data());
    for (gr, &c) in a.groups.iter().zip(&centers) {
        let ball = ball_query_topk(&cloud, cloud.points[c], 0.8, 6).unwrap();
        assert_eq!(gr.member_indices, ball.member_indices);
    }
}

#[test]
fn encoder_config_validation() {
    assert!(EncoderConfig::standard(3).validate().is_ok());
    let mut bad = EncoderConfig::standard(3);
    bad.stages[1].samples = 128;
    assert!(bad.validate().is_err());
    let mut bad = EncoderConfig::standard(3);
    bad.stages[2].block.in_dim = 7;
    assert!(bad.validate().is_err());
}

#[test]
fn encoder_single_stage_uses_all_points() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(31);
    let cloud = random_cloud(&mut rng, 12, 1.0);
    let cfg = EncoderConfig::uniform(3, &[12], &[0.5], &[4], 3, 4);
    let mut store = ParamStore::new(1);
    let enc = Encoder::new(&mut store, "e", &cfg).unwrap();
    let mut g = Graph::new(&store);
    let f = g.constant(
        Tensor::new(
            vec![12, 3],
            cloud.points.iter().flat_map(|p| p.to_array()).collect(),
        )
        .unwrap(),
    );
    let out = enc.forward(&mut g, &cloud, f).unwrap();
    let mut src = out.last().source.clone();
    src.sort();
    assert_eq!(src, (0..12).collect::<Vec<_>>());
}

#[test]
fn encoder_standard_shapes() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(32);
    let cloud = random_cloud(&mut rng, 256, 1.5);
    let cfg = EncoderConfig::standard(3);
    let mut store = ParamStore::new(1);
    let enc = Encoder::new(&mut store, "e", &cfg).unwrap();
    let mut g = Graph::new(&store);
    let f = g.constant(
        Tensor::new(
            vec![256, 3],
            cloud.points.iter().flat_map(|p| p.to_array()).collect(),
        )
        .unwrap(),
    );
    let out = enc.forward(&mut g, &cloud, f).unwrap();
    let shapes: Vec<Vec<usize>> = out
        .stages
        .iter()
        .map(|s| g.shape(s.feats).to_vec())
        .collect();
    assert_eq!(shapes, vec![vec![128, 32], vec![64, 64], vec![32, 128]]);

    let small = random_cloud(&mut rng, 100, 1.0);
    let f = g.constant(Tensor::zeros(&[100, 3]));
    match enc.forward(&mut g, &small, f) {
        Err(Error::StageInsufficientPoints {
            stage: 0,
            needed: 128,
            available: 100,
        }) => {}
        other => panic!("unexpected {:?}", other.err()),
    }
}

#[test]
fn scale_covariance_of_identity_gather() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(40);
    let id = build_transform(&DeformParams::IDENTITY);
    for _ in 0..20 {
        let c = random_cloud(&mut rng, 50, 1.0);
        let c2 = PointCloud::new(c.points.iter().map(|&p| p * 2.0).collect());
        let j = rng.random_range(0..50);
        let a = deform_group(&c, j, &id, 0.4, 7).unwrap();
        let b = deform_group(&c2, j, &id, 0.8, 7).unwrap();
        assert_eq!(a.member_indices, b.member_indices);
    }
}

#[test]
fn encoder_end_to_end_gradcheck() {
    for seed in 0..3u64 {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(41 + seed);
        let cloud = random_cloud(&mut rng, 32, 1.0);
        let cfg = EncoderConfig::uniform(3, &[16, 8], &[0.5, 0.9], &[4, 6], 4, 5);
        let mut store = ParamStore::new(2);
        let enc = Encoder::new(&mut store, "e", &cfg).unwrap();
        randomize(&mut store, 3 + seed, 0.5);
        let feats = rand_tensor(&mut rng, &[32, 3]);
        let readout = rand_tensor(&mut rng, &[8, 6]);
        let row = composite_check("encoder", &store, &feats, usize::MAX, |g, xv| {
            let out = enc.forward(g, &cloud, xv)?;
            let r = g.constant(readout.clone());
            let p = g.mul(out.last().feats, r)?;
            Ok(g.sum_all(p))
        })
        .unwrap();
        assert!(row.passed(), "seed {seed}: {row:?}");
    }
}
