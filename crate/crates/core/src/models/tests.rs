use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::pointcloud::{center, Point3, PointCloud};
use crate::rng::seeded;
use crate::tensor::{grad_check_inputs, GradCheckConfig};

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny_cnn(fusion: Fusion, classes: usize) -> Model {
    Model::new(
        Architecture::MultiView(CnnConfig::quarter(fusion, 16, classes)),
        3,
    )
    .unwrap()
}

fn tiny_pct(points: usize) -> Model {
    let mut cfg = PctConfig::tiny(6);
    cfg.input_points = points;
    Model::new(Architecture::Pct(cfg), 5).unwrap()
}

fn eval_logits(model: &mut Model, x: &Tensor<f32>) -> Vec<f32> {
    let (net, mut s) = model.session(Mode::Eval, 0);
    net.forward(&mut s, x).unwrap().to_vec()
}

/// Rows of `[b, n, k]` data permuted within each batch entry.
fn permute_rows(x: &Tensor<f32>, perm: &[usize]) -> Tensor<f32> {
    let (b, n, k) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for &p in perm {
            out.extend_from_slice(&x.data()[(bi * n + p) * k..][..k]);
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}

#[test]
fn separate_fusion_runs_six_images_per_tree() {
    let mut m = tiny_cnn(Fusion::Separate, 6);
    let x = random_tensor(&[2, 6, 16, 16], 1);
    let (net, mut s) = m.session(Mode::Train, 0);
    let y = net.forward(&mut s, &x).unwrap();
    assert_eq!(y.shape(), &[2, 6]);
    assert_eq!(s.backbone_images(), 12);

    let mut c = tiny_cnn(Fusion::Channels, 6);
    let (net, mut s) = c.session(Mode::Train, 0);
    assert_eq!(net.forward(&mut s, &x).unwrap().shape(), &[2, 6]);
    assert_eq!(s.backbone_images(), 2);
    assert!(net
        .forward(&mut s, &random_tensor(&[2, 6, 8, 8], 1))
        .is_err());
}

#[test]
fn tree_order_permutes_logit_rows() {
    let mut m = tiny_cnn(Fusion::Separate, 6);
    let x = random_tensor(&[3, 6, 16, 16], 2);
    let per = 6 * 16 * 16;
    let swapped: Vec<f32> = [2, 0, 1]
        .iter()
        .flat_map(|&t| x.data()[t * per..(t + 1) * per].to_vec())
        .collect();
    let y = eval_logits(&mut m, &x);
    let ys = eval_logits(&mut m, &Tensor::new(x.shape(), swapped).unwrap());
    for (row, &t) in [2usize, 0, 1].iter().enumerate() {
        assert_eq!(&ys[row * 6..(row + 1) * 6], &y[t * 6..(t + 1) * 6]);
    }
}

#[test]
fn quarter_backbone_is_under_a_tenth_of_resnet18() {
    let quarter: Vec<usize> = RESNET18_WIDTHS.iter().map(|w| w / 4).collect();
    let q = backbone_param_count(1, &quarter, &RESNET18_BLOCKS);
    let full = backbone_param_count(1, &RESNET18_WIDTHS, &RESNET18_BLOCKS);
    assert!(10 * q < full, "{q} vs {full}");
}

#[test]
fn point_embed_is_a_per_point_map() {
    let mut m = tiny_pct(128);
    let mut x = random_tensor(&[1, 128, 3], 4).to_vec();
    let row: Vec<f32> = x[0..3].to_vec();
    x[3 * 7..3 * 8].copy_from_slice(&row);
    let x = Tensor::new(&[1, 128, 3], x).unwrap();
    let (net, mut s) = m.session(Mode::Eval, 0);
    let pct = net.as_pct().unwrap();
    let e = pct.point_embed(&mut s, &x).unwrap();
    assert_eq!(e.shape(), &[1, 128, 16]);
    assert_eq!(&e.data()[0..16], &e.data()[7 * 16..8 * 16]);

    let mut perm: Vec<usize> = (0..128).collect();
    perm.shuffle(&mut seeded(9));
    let ep = pct.point_embed(&mut s, &permute_rows(&x, &perm)).unwrap();
    assert_eq!(ep.data(), permute_rows(&e, &perm).data());
}

#[test]
fn neighbor_embed_shapes() {
    let mut m = tiny_pct(128);
    let x = random_tensor(&[2, 128, 3], 5);
    let (net, mut s) = m.session(Mode::Eval, 0);
    let pct = net.as_pct().unwrap();
    let e = pct.point_embed(&mut s, &x).unwrap();
    let (centers, g) = pct.neighbor_embed(&mut s, &x, &e).unwrap();
    assert_eq!(centers.len(), 2);
    assert_eq!(centers[0].len(), 32);
    assert_eq!(g.shape(), &[2, 32, 64]);

    let mut full = Model::new(Architecture::Pct(PctConfig::full(6)), 1).unwrap();
    let x = random_tensor(&[1, 1024, 3], 6);
    let (net, mut s) = full.session(Mode::Eval, 0);
    let pct = net.as_pct().unwrap();
    let e = pct.point_embed(&mut s, &x).unwrap();
    assert_eq!(e.shape(), &[1, 1024, 64]);
    let (centers, g) = pct.neighbor_embed(&mut s, &x, &e).unwrap();
    assert_eq!(centers[0].len(), 256);
    assert_eq!(g.shape(), &[1, 256, 256]);
}

#[test]
fn too_few_points_rejected() {
    let mut m = tiny_pct(128);
    let x = random_tensor(&[1, 40, 3], 5);
    let (net, mut s) = m.session(Mode::Eval, 0);
    let pct = net.as_pct().unwrap();
    let e = pct.point_embed(&mut s, &x).unwrap();
    assert!(matches!(
        pct.neighbor_embed(&mut s, &x, &e),
        Err(Error::InvalidCount(_))
    ));
    assert!(matches!(
        net.forward(&mut s, &x),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn zero_values_reduce_attention_to_residual_lbr() {
    let mut blk = Block::offset_attention(8, 2).unwrap();
    for name in ["sa.v.weight", "sa.v.bias"] {
        let id = blk.params.id(name).unwrap();
        blk.params.values_mut()[id.0]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let f = random_tensor(&[2, 5, 8], 3);
    let mut lbr = Block::lbr(8, 8, 0);
    // copy the attention block's output transform into a bare LBR
    for (dst, src) in [
        ("lbr.linear.weight", "sa.trans.linear.weight"),
        ("lbr.bn.gamma", "sa.trans.bn.gamma"),
        ("lbr.bn.beta", "sa.trans.bn.beta"),
    ] {
        let (d, s) = (lbr.params.id(dst).unwrap(), blk.params.id(src).unwrap());
        lbr.params.values_mut()[d.0] = blk.params.value(s).to_vec();
    }
    let mut buf = blk.buffers.clone();
    let out = blk
        .forward(&mut Session::new(&blk.params, &mut buf, Mode::Eval, 0), &f)
        .unwrap();
    let mut buf = lbr.buffers.clone();
    let expect = lbr
        .forward(&mut Session::new(&lbr.params, &mut buf, Mode::Eval, 0), &f)
        .unwrap()
        .add(&f)
        .unwrap();
    assert_eq!(out.shape(), f.shape());
    for (a, b) in out.data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn attention_rows_sum_to_one_and_commute_with_permutation() {
    let blk = Block::offset_attention(16, 4).unwrap();
    let f = random_tensor(&[2, 12, 16], 8);
    let mut buf = blk.buffers.clone();
    let mut s = Session::new(&blk.params, &mut buf, Mode::Eval, 0);
    let w = blk.attention_weights(&mut s, &f).unwrap().unwrap();
    for row in w.data().chunks(12) {
        let sum: f32 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5, "{sum}");
    }
    let mut perm: Vec<usize> = (0..12).collect();
    perm.shuffle(&mut seeded(1));
    let out = blk.forward(&mut s, &f).unwrap();
    let out_p = blk.forward(&mut s, &permute_rows(&f, &perm)).unwrap();
    for (a, b) in out_p.data().iter().zip(permute_rows(&out, &perm).data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

fn cloud_tensor(points: &[Point3]) -> Tensor<f32> {
    Tensor::new(
        &[1, points.len(), 3],
        points
            .iter()
            .flat_map(|p| [p.x as f32, p.y as f32, p.z as f32])
            .collect(),
    )
    .unwrap()
}

#[test]
fn pct_logits_ignore_point_order_and_translation() {
    let mut m = tiny_pct(128);
    let mut rng = seeded(12);
    let pts: Vec<Point3> = (0..128)
        .map(|_| {
            Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..2.0),
            )
        })
        .collect();
    let base = eval_logits(&mut m, &cloud_tensor(&pts));
    assert_eq!(base.len(), 6);
    for seed in 0..3 {
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut seeded(seed));
        let y = eval_logits(&mut m, &cloud_tensor(&shuffled));
        for (a, b) in y.iter().zip(&base) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
    let cloud = PointCloud::new("t", pts.clone()).unwrap();
    let moved = PointCloud::new(
        "t",
        pts.iter()
            .map(|p| Point3::new(p.x + 250.0, p.y - 31.0, p.z + 4.0))
            .collect(),
    )
    .unwrap();
    let a = eval_logits(&mut m, &cloud_tensor(&center(&cloud).unwrap().points));
    let b = eval_logits(&mut m, &cloud_tensor(&center(&moved).unwrap().points));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-4);
    }
}

#[test]
fn eval_is_bitwise_deterministic() {
    let mut m = tiny_pct(128);
    let x = random_tensor(&[3, 128, 3], 2);
    let a = eval_logits(&mut m, &x);
    let b = eval_logits(&mut m.clone(), &x);
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn train_mode_updates_running_stats_eval_does_not() {
    let mut m = tiny_cnn(Fusion::Channels, 3);
    let before = m.buffers.clone();
    let x = random_tensor(&[2, 6, 16, 16], 3);
    eval_logits(&mut m, &x);
    assert_eq!(m.buffers, before);
    let (net, mut s) = m.session(Mode::Train, 0);
    net.forward(&mut s, &x).unwrap();
    drop(s);
    assert_ne!(m.buffers, before);
}

#[test]
fn save_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = tiny_cnn(Fusion::Separate, 4);
    let (net, mut s) = m.session(Mode::Train, 0);
    net.forward(&mut s, &random_tensor(&[2, 6, 16, 16], 0))
        .unwrap();
    drop(s);
    m.save(dir.path(), &[("class_names".into(), "a,b,c,d".into())])
        .unwrap();
    let (mut back, kv) = Model::load(dir.path()).unwrap();
    assert!(kv.contains(&("class_names".to_string(), "a,b,c,d".to_string())));
    assert_eq!(back.params, m.params);
    assert_eq!(back.buffers, m.buffers);
    let x = random_tensor(&[1, 6, 16, 16], 1);
    assert_eq!(eval_logits(&mut back, &x), eval_logits(&mut m, &x));

    let other = tiny_cnn(Fusion::Channels, 4);
    other.save(dir.path(), &[]).unwrap();
    std::fs::copy(dir.path().join(WEIGHTS_FILE), dir.path().join("w")).unwrap();
    m.save(dir.path(), &[]).unwrap();
    std::fs::copy(dir.path().join("w"), dir.path().join(WEIGHTS_FILE)).unwrap();
    assert!(Model::load(dir.path()).is_err());
}

/// Gradient of `sum(logits * r)` with respect to sampled parameters, in
/// double precision, train mode.
fn model_grad_check(model: &Model, input: &Tensor<f32>, names: &[&str]) -> GradCheckReport {
    let params = model.params.cast::<f64>();
    let x = Tensor::<f64>::new(
        input.shape(),
        input.data().iter().map(|&v| v as f64).collect(),
    )
    .unwrap();
    let ids: Vec<ParamId> = names.iter().map(|n| params.id(n).unwrap()).collect();
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = ids
        .iter()
        .map(|&id| (params.shape(id).to_vec(), params.value(id).to_vec()))
        .collect();
    let k = model.arch().num_classes();
    let weights: Vec<f64> = (0..input.shape()[0] * k)
        .map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3 + 0.1)
        .collect();
    let cfg = GradCheckConfig::double().sampled(12);
    grad_check_inputs(
        |xs: &[Tensor<f64>]| {
            let mut buffers = model.buffers.cast::<f64>();
            let mut s = Session::new(&params, &mut buffers, Mode::Train, 0).track_grads(false);
            for (&id, t) in ids.iter().zip(xs) {
                s.bind(id, t.clone())?;
            }
            let y = model.net().forward(&mut s, &x)?;
            let r = Tensor::new(y.shape(), weights.clone())?;
            Ok(y.mul(&r)?.sum())
        },
        &inputs,
        &cfg,
    )
    .unwrap()
}

use crate::tensor::GradCheckReport;

#[test]
fn tiny_heads_pass_double_precision_grad_check() {
    let cnn = tiny_cnn(Fusion::Separate, 3);
    let x = random_tensor(&[2, 6, 16, 16], 7);
    let r = model_grad_check(
        &cnn,
        &x,
        &[
            "backbone.stem.weight",
            "backbone.layer3.0.conv1.weight",
            "classifier.weight",
        ],
    );
    assert!(r.passed, "{r:?}");

    let mut cfg = PctConfig::tiny(3);
    cfg.dropout = 0.0;
    let pct = Model::new(Architecture::Pct(cfg), 1).unwrap();
    let x = random_tensor(&[2, 128, 3], 8);
    let r = model_grad_check(
        &pct,
        &x,
        &[
            "embed1.linear.weight",
            "sg2.lbr1.linear.weight",
            "sa2.q.weight",
            "head1.linear.weight",
        ],
    );
    assert!(r.passed, "{r:?}");
}
