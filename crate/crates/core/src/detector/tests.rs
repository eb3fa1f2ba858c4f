use super::*;
use crate::autodiff::grad_check;
use crate::rng::uniform_tensor;

fn small_config() -> DetectorConfig {
    DetectorConfig {
        feat_dim: 16,
        groups: 16,
        boundary_hidden: 8,
        roi_dim: 2,
        pem_hidden: vec![6],
        ..DetectorConfig::default()
    }
}

fn zeroed(det: &mut Detector, prefix: &str) {
    let names: Vec<String> = det.params.names().to_vec();
    for (name, v) in names.iter().zip(det.params.values_mut()) {
        if name.starts_with(prefix) && !name.ends_with("gn_g") {
            v.data_mut().fill(0.0);
        }
    }
}

#[test]
fn enhance_of_zero_is_zero() {
    let mut det = init_detector(&small_config(), 1);
    zeroed(&mut det, "det.enh");
    let mut g = Graph::new(Mode::Eval);
    let p = det.params.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[5, 16]));
    let y = enhance(&mut g, &p, x, 16).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn enhance_preserves_shape() {
    let det = init_detector(&small_config(), 1);
    for n in [1, 3, 9] {
        let mut g = Graph::new(Mode::Eval);
        let p = det.params.bind(&mut g);
        let x = g.constant(uniform_tensor(&mut stream(n as u64, "x"), &[n, 16], 1.0));
        let y = enhance(&mut g, &p, x, 16).unwrap();
        assert_eq!(g.shape(y), &[n, 16]);
    }
}

#[test]
fn enhance_gradient_matches_finite_differences() {
    let det = init_detector(&small_config(), 2);
    let mut rng = stream(3, "enh");
    let x = uniform_tensor(&mut rng, &[6, 16], 1.0);
    let mix = uniform_tensor(&mut rng, &[6, 16], 1.0);
    let r = grad_check(
        |g, x| {
            let p = det.params.bind(g);
            let y = enhance(g, &p, x, 16)?;
            let m = g.constant(mix.clone());
            let y = g.mul(y, m)?;
            g.sum(y)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

#[test]
fn group_count_must_divide_width() {
    let cfg = DetectorConfig { feat_dim: 24, ..small_config() };
    let mut errors = Vec::new();
    cfg.validate(&mut errors);
    assert_eq!(errors.len(), 1);
    let det = init_detector(&cfg, 1);
    let mut g = Graph::new(Mode::Eval);
    let p = det.params.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[4, 24]));
    assert!(det.backbone(&mut g, &p, x).is_err());
}

#[test]
fn boundary_head_probabilities() {
    let mut det = init_detector(&small_config(), 4);
    let f = uniform_tensor(&mut stream(5, "f"), &[7, 16], 1.0);
    let (s, e) = det.boundary_probs(&f).unwrap();
    assert_eq!((s.len(), e.len()), (7, 7));
    assert!(s.iter().chain(&e).all(|&p| p > 0.0 && p < 1.0));
    zeroed(&mut det, "det.bd");
    let (s, e) = det.boundary_probs(&f).unwrap();
    assert!(s.iter().chain(&e).all(|&p| p == 0.5));
}

#[test]
fn zero_pem_gives_identity_refinement() {
    let mut det = init_detector(&small_config(), 6);
    zeroed(&mut det, "det.pem");
    let mut g = Graph::new(Mode::Eval);
    let p = det.params.bind(&mut g);
    let f = g.constant(uniform_tensor(&mut stream(7, "f"), &[8, 16], 1.0));
    let props = vec![Segment::new(1.0, 4.0), Segment::new(2.0, 7.0)];
    let out = det.forward(&mut g, &p, f, props.clone()).unwrap();
    for st in &out.stages {
        for v in &st.values {
            assert_eq!((v.ds, v.de, v.dc, v.dlogw), (0.0, 0.0, 0.0, 0.0));
            assert_eq!((v.iou_cls, v.iou_reg, v.prop_start, v.prop_end), (0.5, 0.5, 0.5, 0.5));
        }
        assert_eq!(st.refined, props);
    }
}

#[test]
fn pem_outputs_follow_proposal_permutation() {
    let det = init_detector(&small_config(), 8);
    let f = uniform_tensor(&mut stream(9, "f"), &[10, 16], 1.0);
    let props = vec![Segment::new(1.0, 4.0), Segment::new(2.0, 9.0), Segment::new(0.0, 3.0)];
    let run = |props: Vec<Segment>| {
        let mut g = Graph::new(Mode::Eval);
        let p = det.params.bind(&mut g);
        let fv = g.constant(f.clone());
        let bb = det.backbone(&mut g, &p, fv).unwrap();
        det.stage(&mut g, &p, &bb, 0, props).unwrap().values
    };
    let a = run(props.clone());
    let b = run(vec![props[2], props[0], props[1]]);
    assert_eq!(vec![a[2], a[0], a[1]], b);
}

/// Stage inputs of a reference forward pass. Refined boundaries are detached
/// between stages, so finite differences must hold them fixed too.
fn stage_inputs(det: &Detector, f: &Tensor, props: &[Segment]) -> Vec<Vec<Segment>> {
    let mut g = Graph::new(Mode::Eval);
    let p = det.params.bind(&mut g);
    let fv = g.constant(f.clone());
    let out = det.forward(&mut g, &p, fv, props.to_vec()).unwrap();
    out.stages.into_iter().map(|s| s.proposals).collect()
}

fn forward_fixed(det: &Detector, g: &mut Graph, p: &Bound, x: Var, inputs: &[Vec<Segment>]) -> Result<DetectorOutput> {
    let bb = det.backbone(g, p, x)?;
    let stages = inputs
        .iter()
        .enumerate()
        .map(|(i, props)| det.stage(g, p, &bb, i, props.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectorOutput { start_logits: bb.start_logits, end_logits: bb.end_logits, stages })
}

#[test]
fn pem_head_parameter_gradients() {
    let det = init_detector(&small_config(), 10);
    let f = uniform_tensor(&mut stream(11, "f"), &[10, 16], 1.0);
    let props = vec![Segment::new(1.0, 4.0), Segment::new(2.0, 9.0)];
    let gt = vec![Segment::new(1.5, 4.5)];
    let inputs = stage_inputs(&det, &f, &props);
    for name in ["det.pem0.a.0.w", "det.pem0.b.1.w", "det.pem0.c.0.b"] {
        let w0 = det.params.get(name).unwrap().clone();
        let r = grad_check(
            |g, w| {
                let mut p = det.params.bind(g);
                p.rebind(name, w);
                let fv = g.constant(f.clone());
                let out = forward_fixed(&det, g, &p, fv, &inputs)?;
                Ok(compute_loss(g, &out, &gt, &det.config.labels)?.total)
            },
            &w0,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-6, "{name}: {r:?}");
    }
}

#[test]
fn refine_examples() {
    let zero = PemValues { ds: 0.0, de: 0.0, dc: 0.0, dlogw: 0.0, iou_cls: 0.5, iou_reg: 0.5, prop_start: 0.5, prop_end: 0.5 };
    let p = [Segment::new(4.0, 6.0)];
    assert_eq!(refine(&p, &[zero], 10), p.to_vec());
    let wide = PemValues { dlogw: 2f64.ln(), ..zero };
    let r = refine(&p, &[wide], 10)[0];
    assert!((r.start - 3.5).abs() < 1e-12 && (r.end - 6.5).abs() < 1e-12);
    let wild = PemValues { ds: -40.0, de: 50.0, dc: 3.0, dlogw: 100.0, ..zero };
    let r = refine(&p, &[wild], 10)[0];
    assert!(r.start >= 0.0 && r.end <= 10.0 && r.start < r.end);
    let inverted = PemValues { ds: 3.0, de: -3.0, ..zero };
    let r = refine(&p, &[inverted], 10)[0];
    assert!(r.start < r.end);
}

fn constant_output(g: &mut Graph, start: &[f64], end: &[f64], props: Vec<Segment>, a: &[f64], b: &[f64], c: &[f64]) -> DetectorOutput {
    let n = start.len();
    let p = props.len();
    let start_logits = g.input(Tensor::new(vec![n], start.to_vec()).unwrap());
    let end_logits = g.input(Tensor::new(vec![n], end.to_vec()).unwrap());
    let head_a = g.input(Tensor::new(vec![p, 4], a.to_vec()).unwrap());
    let head_b = g.input(Tensor::new(vec![p, 2], b.to_vec()).unwrap());
    let head_c = g.input(Tensor::new(vec![p, 2], c.to_vec()).unwrap());
    let stage = StageOutput { refined: props.clone(), proposals: props, head_a, head_b, head_c, values: Vec::new() };
    DetectorOutput { start_logits, end_logits, stages: vec![stage] }
}

fn one_stage() -> LabelConfig {
    LabelConfig { stage_thresholds: vec![0.7], ..LabelConfig::default() }
}

#[test]
fn single_proposal_loss_by_hand() {
    // Snippet labels for gt [1, 3] over 4 snippets: starts [1,1,1,0], ends [0,1,1,1].
    // Zero logits: each balanced BCE side is ln2 / 2, so l_bd_s = 2 ln2.
    // The proposal equals the gt: proposal start/end labels positive only -> ln2;
    // IoU class positive only -> ln2 / 2; IoU regression (0.5 - 1)^2 = 0.25;
    // smooth-L1 of (0.1, -0.2, 0.3, 0) against 0 -> (0.005 + 0.02 + 0.045) / 4.
    let mut g = Graph::new(Mode::Train);
    let out = constant_output(
        &mut g,
        &[0.0; 4],
        &[0.0; 4],
        vec![Segment::new(1.0, 3.0)],
        &[0.1, -0.2, 0.0, 0.0],
        &[0.3, 0.0],
        &[0.0, 0.0],
    );
    let l = compute_loss(&mut g, &out, &[Segment::new(1.0, 3.0)], &one_stage()).unwrap();
    let ln2 = 2f64.ln();
    let b = &l.breakdown;
    assert!((b.l_bd_s - 2.0 * ln2).abs() < 1e-14);
    assert!((b.l_bd_p[0] - ln2).abs() < 1e-14);
    assert!((b.l_iou[0] - (0.5 * ln2 + 0.25)).abs() < 1e-14);
    assert!((b.l_secw[0] - 0.0175).abs() < 1e-14);
    assert!((b.total - (3.5 * ln2 + 0.25 + 0.175)).abs() < 1e-13);
    assert!((b.total - b.recomputed_total()).abs() < 1e-13);
}

#[test]
fn perfect_predictions_have_vanishing_loss() {
    let big = 60.0;
    let gt = [Segment::new(1.0, 3.0)];
    let start = [big, big, big, -big];
    let end = [-big, big, big, big];
    let props = vec![Segment::new(1.0, 3.0), Segment::new(0.0, 4.0)];
    // Second proposal: iou 0.5 (ignored by the IoU classifier), starts at 0 and
    // ends at 4, both within 1.5 of the gt edges.
    let a = [0.0, 0.0, big, big, 0.25, -0.25, big, big];
    let b = [0.0, 0.0, 0.0, 0.5f64.ln()];
    let c = [big, big, 0.0, 0.0];
    let mut g = Graph::new(Mode::Train);
    let out = constant_output(&mut g, &start, &end, props, &a, &b, &c);
    let l = compute_loss(&mut g, &out, &gt, &one_stage()).unwrap();
    // Only the IoU regression of the second proposal, (0.5 - 0.5)^2, and the
    // e^-60 tails remain.
    assert!(l.breakdown.total < 1e-12, "{:?}", l.breakdown);
}

#[test]
fn no_positive_proposals_means_no_regression_loss() {
    let mut g = Graph::new(Mode::Train);
    let out = constant_output(&mut g, &[0.0; 8], &[0.0; 8], vec![Segment::new(5.0, 7.0)], &[0.3; 4], &[0.2; 2], &[0.1; 2]);
    let l = compute_loss(&mut g, &out, &[Segment::new(0.0, 2.0)], &one_stage()).unwrap();
    assert_eq!(l.breakdown.l_secw[0], 0.0);
    let out = constant_output(&mut g, &[0.0; 8], &[0.0; 8], vec![Segment::new(5.0, 7.0)], &[0.3; 4], &[0.2; 2], &[0.1; 2]);
    let l = compute_loss(&mut g, &out, &[], &one_stage()).unwrap();
    assert_eq!(l.breakdown.l_secw[0], 0.0);
    assert!(l.breakdown.total.is_finite());
}

fn full_loss(det: &Detector, f: &Tensor, props: &[Segment], gt: &[Segment]) -> LossBreakdown {
    let mut g = Graph::new(Mode::Eval);
    let p = det.params.bind(&mut g);
    let fv = g.constant(f.clone());
    let out = det.forward(&mut g, &p, fv, props.to_vec()).unwrap();
    compute_loss(&mut g, &out, gt, &det.config.labels).unwrap().breakdown
}

#[test]
fn loss_is_invariant_to_proposal_order() {
    let det = init_detector(&small_config(), 12);
    let f = uniform_tensor(&mut stream(13, "f"), &[12, 16], 1.0);
    let gt = [Segment::new(2.0, 6.0), Segment::new(8.0, 11.0)];
    let props: Vec<Segment> = crate::tadeval::enumerate_proposals(12)
        .unwrap()
        .into_iter()
        .map(|(s, e)| Segment::new(s as f64, e as f64))
        .collect();
    let mut rev = props.clone();
    rev.reverse();
    let a = full_loss(&det, &f, &props, &gt);
    let b = full_loss(&det, &f, &rev, &gt);
    assert!((a.total - b.total).abs() <= 1e-12 * a.total.abs().max(1.0));
    assert!(a.l_secw.iter().any(|&v| v > 0.0));
}

#[test]
fn sampled_subset_loss_equals_restricted_loss() {
    let det = init_detector(&small_config(), 14);
    let f = uniform_tensor(&mut stream(15, "f"), &[12, 16], 1.0);
    let gt = [Segment::new(2.0, 6.0)];
    let all: Vec<Segment> = crate::tadeval::enumerate_proposals(12)
        .unwrap()
        .into_iter()
        .map(|(s, e)| Segment::new(s as f64, e as f64))
        .collect();
    let idx = crate::samplers::sample(
        &crate::samplers::SampleRequest::new(all.len(), 20, crate::samplers::Strategy::Random),
        &mut stream(16, "aps"),
    )
    .unwrap();
    let subset: Vec<Segment> = idx.iter().map(|&i| all[i]).collect();
    let restricted: Vec<Segment> = all.iter().enumerate().filter(|(i, _)| idx.contains(i)).map(|(_, s)| *s).collect();
    assert_eq!(full_loss(&det, &f, &subset, &gt), full_loss(&det, &f, &restricted, &gt));
}

#[test]
fn full_detector_input_gradient() {
    let det = init_detector(&small_config(), 17);
    let f = uniform_tensor(&mut stream(18, "f"), &[16, 16], 1.0);
    let gt = vec![Segment::new(3.0, 8.0), Segment::new(10.0, 15.0)];
    let props: Vec<Segment> = [(3, 8), (2, 9), (10, 15), (0, 5), (9, 14), (4, 12)]
        .iter()
        .map(|&(s, e)| Segment::new(s as f64, e as f64))
        .collect();
    let inputs = stage_inputs(&det, &f, &props);
    let r = grad_check(
        |g, x| {
            let p = det.params.bind(g);
            let out = forward_fixed(&det, g, &p, x, &inputs)?;
            Ok(compute_loss(g, &out, &gt, &det.config.labels)?.total)
        },
        &f,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-5, "{r:?}");
    assert!(r.checked > 0);
}
