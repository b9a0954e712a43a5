//! Acceptance suite: one test per release criterion, each printing a PASS
//! line with its measured margin. Tests serialize on a gate mutex so that
//! wall-clock budgets are measured without contention.

mod common;

use std::collections::BTreeSet;
use std::rc::Rc;
use std::sync::Mutex;
use std::time::Instant;

use orscene_core::cc::{CellId, CellKind, CombinatorialComplex};
use orscene_core::config::ModalityToggles;
use orscene_core::hat::HatNetwork;
use orscene_core::numerics::{finite_diff_grad, rel_err, ParamStore, RngStream, Tape, Tensor};
use orscene_core::scene::build_window;
use orscene_core::synth::generate_episode;
use orscene_core::tasks::{HeadConfig, TaskHeads};
use orscene_core::train::{train_model, Dataset, Model};
use orscene_core::RunConfig;

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn pass(criterion: &str, detail: String) {
    println!("acceptance {criterion}: PASS ({detail})");
}

#[test]
fn a01_reference_number_scope_statement() {
    let _g = gate();
    // This artifact ships no clinical recordings or frozen perception
    // models, so no criterion asserts against externally reported benchmark
    // scores. Every quantitative check below is property-based or measured
    // against the synthetic generator's own oracle labels.
    pass(
        "01 reference-number scope",
        "no external-benchmark assertions; acceptance is property/oracle-based".into(),
    );
}

/// Builds a full model (network + heads) over a complex and returns a
/// deterministic scalar loss touching every head.
fn full_loss(
    net: &HatNetwork,
    heads: &TaskHeads,
    frozen: &orscene_core::FrozenComplex,
    store: &ParamStore,
) -> Result<f64, orscene_core::numerics::NumericsError> {
    let mut tape = Tape::new();
    let pass = net.forward(frozen, &mut tape, store).expect("forward");
    let pooled = net
        .pool(frozen, pass.final_state(), &mut tape, store)
        .expect("pool");
    let (action, phase) = heads.forward_heads(pooled, &mut tape, store)?;
    let ce_a = tape.cross_entropy(action, 1)?;
    let ce_p = tape.cross_entropy(phase, 2)?;
    let final_state = pass.final_state();
    let hs = tape.gather_rows(final_state, Rc::new(vec![0, 1]))?;
    let ho = tape.gather_rows(final_state, Rc::new(vec![1, 0]))?;
    let pairs = tape.concat_cols(&[hs, ho])?;
    let logits = heads.relation.forward(pairs, &mut tape, store)?;
    let ce_r = tape.cross_entropy_rows(logits, Rc::new(vec![0, 2]))?;
    let ab = tape.add(ce_a, ce_p)?;
    let loss = tape.add(ab, ce_r)?;
    tape.value(loss).scalar_value()
}

#[test]
fn a02_end_to_end_gradient_check_against_finite_differences() {
    let _g = gate();
    let started = Instant::now();
    let mut rng = RngStream::new(20240);
    let frozen = common::random_frozen(&mut rng, 20);
    let (net, mut store) = common::random_net(common::small_config(), &frozen, 9001);
    let heads = TaskHeads::init(
        net.config.d_model,
        HeadConfig {
            action_classes: 3,
            phase_classes: 4,
            relation_classes: 3,
        },
        &mut store,
        &mut RngStream::new(77),
    );
    common::randomize_store(&mut store, &mut rng);

    // reverse-mode gradients
    store.zero_grads();
    {
        let mut tape = Tape::new();
        let pass = net.forward(&frozen, &mut tape, &store).unwrap();
        let pooled = net
            .pool(&frozen, pass.final_state(), &mut tape, &store)
            .unwrap();
        let (action, phase) = heads.forward_heads(pooled, &mut tape, &store).unwrap();
        let ce_a = tape.cross_entropy(action, 1).unwrap();
        let ce_p = tape.cross_entropy(phase, 2).unwrap();
        let final_state = pass.final_state();
        let hs = tape.gather_rows(final_state, Rc::new(vec![0, 1])).unwrap();
        let ho = tape.gather_rows(final_state, Rc::new(vec![1, 0])).unwrap();
        let pairs = tape.concat_cols(&[hs, ho]).unwrap();
        let logits = heads.relation.forward(pairs, &mut tape, &store).unwrap();
        let ce_r = tape.cross_entropy_rows(logits, Rc::new(vec![0, 2])).unwrap();
        let ab = tape.add(ce_a, ce_p).unwrap();
        let loss = tape.add(ab, ce_r).unwrap();
        tape.backward(loss, &mut store).unwrap();
    }

    let oracle = finite_diff_grad(&mut store, 1e-5, |s| full_loss(&net, &heads, &frozen, s))
        .unwrap();
    let mut worst = 0.0f64;
    let mut entries = 0usize;
    for (id, fd) in &oracle {
        for (ad, od) in store.get(*id).grad.data().iter().zip(fd.data()) {
            worst = worst.max(rel_err(*ad, *od));
            entries += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(worst < 1e-4, "max rel err {worst}");
    assert!(elapsed < 60.0, "gradient check took {elapsed:.1} s");
    pass(
        "02 gradient-correctness",
        format!("{entries} entries, max rel err {worst:.2e}, {elapsed:.1} s"),
    );
}

#[test]
fn a03_attention_coefficients_normalize() {
    let _g = gate();
    let mut rng = RngStream::new(3300);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let frozen = common::random_frozen(&mut rng, 5 + (i % 26));
        let (net, mut store) = common::random_net(common::small_config(), &frozen, 3400 + i as u64);
        common::randomize_store(&mut store, &mut rng);
        let mut tape = Tape::new();
        let pass = net.forward(&frozen, &mut tape, &store).unwrap();
        for layer in 0..net.config.layers {
            let features = tape.value(pass.states[layer]).clone();
            for cell in frozen.cells() {
                for head in 0..net.config.heads {
                    let coeffs = net
                        .attention_coeffs(layer, head, cell.id, &frozen, &features, &store)
                        .unwrap();
                    let sum: f64 = coeffs.iter().map(|(_, w)| w).sum();
                    worst = worst.max((sum - 1.0).abs());
                }
            }
        }
    }
    assert!(worst < 1e-9, "worst |sum - 1| = {worst:e}");
    pass(
        "03 attention-normalization",
        format!("100 complexes, worst |sum-1| {worst:.2e}"),
    );
}

fn permute_complex(cc: &CombinatorialComplex, perm: &[usize]) -> CombinatorialComplex {
    let n = cc.len();
    let mut inverse = vec![0usize; n];
    for (old, &new) in perm.iter().enumerate() {
        inverse[new] = old;
    }
    let cells: Vec<_> = cc.cells().cloned().collect();
    let mut out = CombinatorialComplex::new();
    for new_id in 0..n {
        let mut cell = cells[inverse[new_id]].clone();
        cell.id = CellId(new_id as u32);
        out.add_cell(cell).unwrap();
    }
    for (lower, upper) in cc.incidence_pairs() {
        out.add_incidence(
            CellId(perm[lower.index()] as u32),
            CellId(perm[upper.index()] as u32),
        )
        .unwrap();
    }
    out
}

#[test]
fn a04_permutation_equivariance() {
    let _g = gate();
    let mut rng = RngStream::new(4400);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let cc = common::random_complex(&mut rng, 6 + (i % 20));
        let n = cc.len();
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let frozen = cc.clone().freeze().unwrap();
        let permuted = permute_complex(&cc, &perm).freeze().unwrap();

        let (net, mut store) = common::random_net(common::small_config(), &frozen, 4500 + i as u64);
        common::randomize_store(&mut store, &mut rng);

        let mut tape = Tape::new();
        let out = {
            let pass = net.forward(&frozen, &mut tape, &store).unwrap();
            tape.value(pass.final_state()).clone()
        };
        let mut tape2 = Tape::new();
        let out_p = {
            let pass = net.forward(&permuted, &mut tape2, &store).unwrap();
            tape2.value(pass.final_state()).clone()
        };
        for old in 0..n {
            for (a, b) in out.row(old).iter().zip(out_p.row(perm[old])) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-10, "worst row diff {worst:e}");
    pass(
        "04 permutation-equivariance",
        format!("50 complexes, worst diff {worst:.2e}"),
    );
}

#[test]
fn a05_zero_bias_reduces_to_plain_scaled_dot_product() {
    let _g = gate();
    let mut rng = RngStream::new(5500);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let frozen = common::random_frozen(&mut rng, 6 + (i % 18));
        let (net, mut store) = common::random_net(common::small_config(), &frozen, 5600 + i as u64);
        common::randomize_store(&mut store, &mut rng);
        // switch the rank-pair bias off
        for layer in &net.layers {
            let shape = store.value(layer.phi).shape().to_vec();
            store.get_mut(layer.phi).value = Tensor::zeros(&shape);
        }
        let mut tape = Tape::new();
        let pass = net.forward(&frozen, &mut tape, &store).unwrap();
        for layer in 0..net.config.layers {
            let features = tape.value(pass.states[layer]).clone();
            for cell in frozen.cells() {
                for head in 0..net.config.heads {
                    let coeffs = net
                        .attention_coeffs(layer, head, cell.id, &frozen, &features, &store)
                        .unwrap();
                    // independent plain attention over the same support
                    let head_params = &net.layers[layer].heads[head];
                    let dk = net.config.d_k() as f64;
                    let hy = features.gather_rows(&[cell.id.index()]).unwrap();
                    let q = hy.matmul(store.value(head_params.w_q)).unwrap();
                    let scores: Vec<f64> = coeffs
                        .iter()
                        .map(|(x, _)| {
                            let hx = features.gather_rows(&[x.index()]).unwrap();
                            let k = hx.matmul(store.value(head_params.w_k)).unwrap();
                            let dot: f64 =
                                q.data().iter().zip(k.data()).map(|(a, b)| a * b).sum();
                            dot / dk.sqrt()
                        })
                        .collect();
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    for ((_, got), e) in coeffs.iter().zip(&exps) {
                        worst = worst.max((got - e / total).abs());
                    }
                }
            }
        }
    }
    assert!(worst < 1e-12, "worst coefficient diff {worst:e}");
    pass(
        "05 bias-off-reduction",
        format!("20 complexes, worst diff {worst:.2e}"),
    );
}

#[test]
fn a06_zero_output_projection_is_bitwise_identity() {
    let _g = gate();
    let mut rng = RngStream::new(6600);
    for i in 0..10 {
        let frozen = common::random_frozen(&mut rng, 8 + i);
        let (net, mut store) = common::random_net(common::small_config(), &frozen, 6700 + i as u64);
        common::randomize_store(&mut store, &mut rng);
        for layer in &net.layers {
            let shape = store.value(layer.w_o).shape().to_vec();
            store.get_mut(layer.w_o).value = Tensor::zeros(&shape);
        }
        let mut tape = Tape::new();
        let pass = net.forward(&frozen, &mut tape, &store).unwrap();
        let input = tape.value(pass.layer0());
        let output = tape.value(pass.final_state());
        for (a, b) in input.data().iter().zip(output.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "residual identity must be exact");
        }
    }
    pass("06 residual-identity", "10 complexes, bitwise equal".into());
}

#[test]
fn a07_non_neighbor_perturbation_leaves_one_layer_output_bitwise_unchanged() {
    let _g = gate();
    let mut rng = RngStream::new(7700);
    let mut checked = 0usize;
    while checked < 100 {
        let cc = common::random_complex(&mut rng, 10 + (checked % 15));
        let frozen = cc.clone().freeze().unwrap();
        let n = frozen.len();
        let y = rng.range_usize(n);
        let support: BTreeSet<usize> = frozen
            .attention_support()
            .swap_remove(y)
            .into_iter()
            .collect();
        let candidates: Vec<usize> = (0..n).filter(|i| !support.contains(i)).collect();
        if candidates.is_empty() {
            continue;
        }
        let z = candidates[rng.range_usize(candidates.len())];

        let (net, mut store) = common::random_net(common::small_config(), &frozen, 7800 + checked as u64);
        common::randomize_store(&mut store, &mut rng);

        let mut tape = Tape::new();
        let baseline = {
            let pass = net.forward(&frozen, &mut tape, &store).unwrap();
            tape.value(pass.states[1]).row(y).to_vec()
        };

        let mut perturbed_cc = cc.clone();
        {
            let cell = perturbed_cc.cell_mut(CellId(z as u32)).unwrap();
            for v in &mut cell.raw_feature {
                *v += rng.range(0.5, 1.5);
            }
        }
        let perturbed = perturbed_cc.freeze().unwrap();
        let mut tape2 = Tape::new();
        let after = {
            let pass = net.forward(&perturbed, &mut tape2, &store).unwrap();
            tape2.value(pass.states[1]).row(y).to_vec()
        };
        for (a, b) in baseline.iter().zip(&after) {
            assert_eq!(
                a.to_bits(),
                b.to_bits(),
                "perturbing non-neighbor {z} changed cell {y}"
            );
        }
        checked += 1;
    }
    pass("07 locality", "100 non-neighbor perturbations, bitwise equal".into());
}

#[test]
fn a08_batched_layer_matches_scalar_reference() {
    let _g = gate();
    let mut rng = RngStream::new(8800);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let frozen = common::random_frozen(&mut rng, 6 + (i % 20));
        let (net, mut store) = common::random_net(common::small_config(), &frozen, 8900 + i as u64);
        common::randomize_store(&mut store, &mut rng);
        let mut tape = Tape::new();
        let pass = net.forward(&frozen, &mut tape, &store).unwrap();

        let embedded = tape.value(pass.states[0]).clone();
        worst = worst.max(common::max_abs_diff(
            &embedded,
            &common::scalar_embed(&net, &frozen, &store),
        ));
        for layer in 0..net.config.layers {
            let input = tape.value(pass.states[layer]).clone();
            let got = tape.value(pass.states[layer + 1]).clone();
            let want = common::scalar_layer_forward(&net, layer, &frozen, &input, &store);
            worst = worst.max(common::max_abs_diff(&got, &want));
        }
    }
    assert!(worst < 1e-10, "worst entry diff {worst:e}");
    pass(
        "08 scalar-loop-equivalence",
        format!("20 complexes, worst diff {worst:.2e}"),
    );
}

/// Independent min-pairwise-point distance, written apart from
/// `scene::entity_distance`.
fn oracle_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut best = f64::INFINITY;
    for p in a {
        for q in b {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            if d < best {
                best = d;
            }
        }
    }
    best
}

fn frame_points(frame: &orscene_core::SceneFrame) -> Vec<(orscene_core::EntityId, Vec<[f64; 3]>)> {
    let mut out = Vec::new();
    for h in &frame.humans {
        out.push((h.entity_id, h.joints.iter().map(|j| j.position).collect()));
    }
    for o in &frame.objects {
        out.push((o.entity_id, vec![o.center]));
    }
    out
}

#[test]
fn a09_builder_validity_and_edge_oracles_over_1000_windows() {
    let _g = gate();
    let base = RunConfig::default();
    let mut windows_checked = 0usize;
    let mut spatial_checked = 0usize;
    let mut config_index = 0u64;
    'outer: loop {
        let mut synth = base.synth.clone();
        synth.seed = 9000 + config_index;
        config_index += 1;
        for episode_index in 0..2 {
            let episode = generate_episode(&synth, &base.build, episode_index).unwrap();
            let t = base.build.window_t;
            for start in (0..=(episode.frames.len() - t)).step_by(3) {
                let frames = &episode.frames[start..start + t];
                let window = build_window(frames, &base.build, None).unwrap();
                let violations = window.cc.validate();
                assert!(violations.is_empty(), "window invalid: {}", violations[0]);

                // spatial edges must match the exhaustive pairwise oracle
                let mut rep_lookup = std::collections::BTreeMap::new();
                for (f, refs) in window.entities_per_frame.iter().enumerate() {
                    for e in refs {
                        rep_lookup.insert(e.representative, (f, e.entity_id));
                    }
                }
                let mut got: BTreeSet<(usize, orscene_core::EntityId, orscene_core::EntityId)> =
                    BTreeSet::new();
                let mut temporal_edges = 0usize;
                for cell in window.cc.cells() {
                    match cell.kind {
                        CellKind::SpatialEdge => {
                            let bd: Vec<_> =
                                window.cc.boundary(cell.id).unwrap().into_iter().collect();
                            assert_eq!(bd.len(), 2, "spatial edge must have two endpoints");
                            let (fa, ea) = rep_lookup[&bd[0]];
                            let (fb, eb) = rep_lookup[&bd[1]];
                            assert_eq!(fa, fb, "spatial edge must stay within one frame");
                            let (lo, hi) = if ea <= eb { (ea, eb) } else { (eb, ea) };
                            got.insert((fa, lo, hi));
                        }
                        CellKind::TemporalEdge => temporal_edges += 1,
                        _ => {}
                    }
                }
                let mut want: BTreeSet<(usize, orscene_core::EntityId, orscene_core::EntityId)> =
                    BTreeSet::new();
                for (f, frame) in frames.iter().enumerate() {
                    let points = frame_points(frame);
                    for i in 0..points.len() {
                        for j in (i + 1)..points.len() {
                            if oracle_distance(&points[i].1, &points[j].1) < base.build.tau_prox {
                                let (a, b) = (points[i].0, points[j].0);
                                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                                want.insert((f, lo, hi));
                            }
                        }
                    }
                }
                assert_eq!(got, want, "spatial edges differ from oracle");
                spatial_checked += want.len();

                // temporal edge count equals consecutive co-presence
                let mut expected_temporal = 0usize;
                for f in 0..frames.len() - 1 {
                    let ids: BTreeSet<_> = frame_points(&frames[f]).iter().map(|p| p.0).collect();
                    expected_temporal += frame_points(&frames[f + 1])
                        .iter()
                        .filter(|p| ids.contains(&p.0))
                        .count();
                }
                assert_eq!(temporal_edges, expected_temporal);

                windows_checked += 1;
                if windows_checked >= 1000 {
                    break 'outer;
                }
            }
        }
    }
    pass(
        "09 builder-validity",
        format!("1000 windows valid; {spatial_checked} spatial edges matched; temporal counts exact"),
    );
}

fn rigid_transform(p: [f64; 3], angle_z: f64, angle_x: f64, shift: [f64; 3]) -> [f64; 3] {
    let (sz, cz) = angle_z.sin_cos();
    let r1 = [cz * p[0] - sz * p[1], sz * p[0] + cz * p[1], p[2]];
    let (sx, cx) = angle_x.sin_cos();
    let r2 = [r1[0], cx * r1[1] - sx * r1[2], sx * r1[1] + cx * r1[2]];
    [r2[0] + shift[0], r2[1] + shift[1], r2[2] + shift[2]]
}

#[test]
fn a10_breach_rule_matches_brute_force_and_rigid_invariance() {
    let _g = gate();
    let run = RunConfig::default();
    let mut rng = RngStream::new(10_100);
    let mut frames: Vec<orscene_core::SceneFrame> = Vec::new();
    // scripted generator frames (contain approach events)
    let mut synth = run.synth.clone();
    synth.seed = 1234;
    for idx in 0..6 {
        frames.extend(generate_episode(&synth, &run.build, idx).unwrap().frames);
        if frames.len() >= 500 {
            frames.truncate(500);
            break;
        }
    }
    // adversarial random frames: tight cluster so near-threshold pairs occur
    use orscene_core::scene::{HumanObs, JointObs, Role};
    while frames.len() < 1000 {
        let humans = (0..4)
            .map(|i| {
                let roles = [Role::Patient, Role::Technician, Role::HeadSurgeon, Role::Nurse];
                let base = [rng.range(-0.8, 0.8), rng.range(-0.8, 0.8), rng.range(0.5, 1.5)];
                HumanObs {
                    entity_id: orscene_core::EntityId(i as u32 + 1),
                    role: roles[i],
                    joints: (0..3)
                        .map(|j| JointObs {
                            name: format!("j{j}"),
                            position: [
                                base[0] + rng.range(-0.3, 0.3),
                                base[1] + rng.range(-0.3, 0.3),
                                base[2] + rng.range(-0.3, 0.3),
                            ],
                            semantic_feature: vec![0.0],
                        })
                        .collect(),
                }
            })
            .collect();
        frames.push(orscene_core::SceneFrame {
            timestamp: 0.0,
            humans,
            objects: vec![],
            evidence: Default::default(),
            cameras: vec![],
        });
    }

    let mut flagged = 0usize;
    for frame in &frames {
        let report = orscene_core::tasks::detect_breach_in_frame(frame, &run.build);

        // brute-force oracle, written independently
        let mut expect_pairs = Vec::new();
        for u in &frame.humans {
            if !run.build.nonsterile_roles.contains(&u.role) {
                continue;
            }
            for v in &frame.humans {
                if u.entity_id == v.entity_id || !run.build.sterile_roles.contains(&v.role) {
                    continue;
                }
                let pu: Vec<[f64; 3]> = u.joints.iter().map(|j| j.position).collect();
                let pv: Vec<[f64; 3]> = v.joints.iter().map(|j| j.position).collect();
                if oracle_distance(&pu, &pv) < run.build.tau_breach {
                    expect_pairs.push((u.entity_id, v.entity_id));
                }
            }
        }
        expect_pairs.sort_unstable();
        assert_eq!(report.breach, !expect_pairs.is_empty());
        assert_eq!(report.pairs, expect_pairs);
        flagged += report.breach as usize;

        // invariant under a random rigid transform
        let az = rng.range(0.0, 6.28);
        let ax = rng.range(0.0, 6.28);
        let shift = [rng.range(-3.0, 3.0), rng.range(-3.0, 3.0), rng.range(-1.0, 1.0)];
        let mut moved = frame.clone();
        for h in &mut moved.humans {
            for j in &mut h.joints {
                j.position = rigid_transform(j.position, az, ax, shift);
            }
        }
        let moved_report = orscene_core::tasks::detect_breach_in_frame(&moved, &run.build);
        assert_eq!(report, moved_report, "rigid transform changed the verdict");
    }
    pass(
        "10 breach-rule-oracle",
        format!("1000 frames exact, {flagged} flagged, rigid-invariant"),
    );
}

#[test]
fn a11_a12_default_config_learnability_and_triplet_reduction() {
    let _g = gate();
    let run = RunConfig::default();
    let started = Instant::now();
    let dataset = Dataset::generate(&run).unwrap();
    let outcome = train_model(&run, &dataset, |_| {}).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let best = outcome.best_scores.expect("training evaluates");
    assert!(elapsed < 600.0, "training took {elapsed:.0} s");
    assert!(best.action_f1 >= 0.90, "next-action macro-F1 {:.3}", best.action_f1);
    assert!(best.phase_f1 >= 0.90, "robot-phase macro-F1 {:.3}", best.phase_f1);
    pass(
        "11 multi-task learnability",
        format!(
            "val action {:.3}, phase {:.3} after {} steps in {:.0} s",
            best.action_f1, best.phase_f1, outcome.steps_run, elapsed
        ),
    );

    assert!(best.relation_f1 >= 0.90, "relation macro-F1 {:.3}", best.relation_f1);

    // reduce test windows with the best checkpoint and verify the exported
    // line format byte by byte
    let mut store = outcome.store.clone();
    store.restore(&outcome.best_snapshot).unwrap();
    let model = &outcome.model;
    let mut produced = 0usize;
    let dir = std::env::temp_dir().join(format!("orscene_acceptance_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("triplets.txt");
    let mut all = BTreeSet::new();
    for &(e, start) in dataset
        .windows(&dataset.split.test, run.build.window_t)
        .iter()
        .take(8)
    {
        let frames = &dataset.episodes[e].frames[start..start + run.build.window_t];
        let frozen = model.build_frozen_window(frames, &store).unwrap();
        let mut tape = Tape::new();
        let fwd = model.net.forward(&frozen.complex, &mut tape, &store).unwrap();
        let features = tape.value(fwd.final_state()).clone();
        let triplets = orscene_core::tasks::reduce_to_scene_graph(
            &frozen,
            &features,
            &model.heads,
            &store,
            &model.predicate_names,
        )
        .unwrap();
        produced += triplets.len();
        all.extend(triplets);
    }
    orscene_core::io::write_triplets(&path, &all).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(produced > 0, "a converged model must emit triplets");
    for line in text.lines() {
        assert!(line.starts_with('\u{27e8}') && line.ends_with('\u{27e9}'), "line: {line}");
        let inner = &line['\u{27e8}'.len_utf8()..line.len() - '\u{27e9}'.len_utf8()];
        let parts: Vec<&str> = inner.split(", ").collect();
        assert_eq!(parts.len(), 3, "line: {line}");
        assert!(parts.iter().all(|p| !p.is_empty()), "line: {line}");
    }
    std::fs::remove_dir_all(&dir).ok();
    pass(
        "12 relation learnability and reduction format",
        format!("val relations {:.3}, {produced} triplets well-formed", best.relation_f1),
    );
}

#[test]
fn a13_serialization_round_trips_are_lossless() {
    let _g = gate();
    let mut rng = RngStream::new(13_000);
    let dir = std::env::temp_dir().join(format!("orscene_roundtrip_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();

    // complexes
    for i in 0..100 {
        let cc = common::random_complex(&mut rng, 4 + (i % 25));
        let window = orscene_core::scene::WindowBuild {
            cc,
            timestamps: vec![rng.range(0.0, 100.0)],
            entities_per_frame: vec![vec![]],
        };
        let file = orscene_core::io::CcFile::from_window(&window);
        let path = dir.join("cc.json");
        orscene_core::io::write_cc(&path, &file).unwrap();
        let back = orscene_core::io::read_cc(&path).unwrap();
        assert_eq!(file, back);
        for (a, b) in file.cells.iter().zip(&back.cells) {
            for (x, y) in a.raw_feature.iter().zip(&b.raw_feature) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    // run configs with randomized fields
    for i in 0..100 {
        let mut run = RunConfig::default();
        run.synth.seed = rng.next_u64();
        run.synth.cluster_separation = rng.range(0.5, 5.0);
        run.synth.feature_noise_sigma = rng.range(0.0, 1.0);
        run.build.tau_prox = rng.range(0.3, 2.5);
        run.build.tau_breach = rng.range(0.1, 1.0);
        run.model.init_seed = rng.next_u64();
        run.model.hat.d_model = 8 * (1 + (i % 4));
        run.model.hat.heads = 2;
        run.train.learning_rate = rng.range(1e-5, 1e-2);
        run.modality_toggles.audio = i % 2 == 0;
        run.modality_toggles.temporal = i % 3 != 0;
        let path = dir.join("run.json");
        orscene_core::io::write_run_config(&path, &run).unwrap();
        let back = orscene_core::io::read_run_config(&path).unwrap();
        assert_eq!(run, back);
    }

    // checkpoints
    for i in 0..100 {
        let mut store = ParamStore::new();
        for p in 0..(2 + i % 5) {
            let rows = 1 + rng.range_usize(6);
            let cols = 1 + rng.range_usize(6);
            store.add(
                format!("p{p}"),
                Tensor::from_vec(&[rows, cols], rng.normal_vec(rows * cols)).unwrap(),
            );
        }
        let file = orscene_core::io::CheckpointFile::from_store(
            orscene_core::hat::HatConfig::default(),
            HeadConfig {
                action_classes: 2,
                phase_classes: 2,
                relation_classes: 2,
            },
            &std::collections::BTreeMap::new(),
            &store,
        );
        let path = dir.join("ckpt.json");
        orscene_core::io::write_checkpoint(&path, &file).unwrap();
        let back = orscene_core::io::read_checkpoint(&path).unwrap();
        assert_eq!(file.params.len(), back.params.len());
        for (a, b) in file.params.iter().zip(&back.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    std::fs::remove_dir_all(&dir).ok();
    pass(
        "13 serialization-round-trip",
        "100 complexes + 100 configs + 100 checkpoints lossless".into(),
    );
}

#[test]
fn a14_ablation_harness_emits_six_incremental_rows() {
    let _g = gate();
    let rows = ModalityToggles::ablation_rows();
    assert_eq!(rows.len(), 6);
    // incremental structure: each row turns exactly one more modality on
    let order = [
        |t: &ModalityToggles| t.objects,
        |t: &ModalityToggles| t.skeletons,
        |t: &ModalityToggles| t.visual,
        |t: &ModalityToggles| t.robot_logs,
        |t: &ModalityToggles| t.audio,
        |t: &ModalityToggles| t.temporal,
    ];
    for (i, (_, toggles)) in rows.iter().enumerate() {
        for (j, on) in order.iter().enumerate() {
            assert_eq!(on(toggles), j <= i, "row {i} toggle {j}");
        }
    }

    // run the harness end to end at a tiny budget and emit the table
    let mut run = RunConfig::default();
    run.model.hat.d_model = 16;
    run.model.hat.heads = 2;
    run.model.hat.d_r = 4;
    run.data.episodes = 3;
    run.data.split = (0.4, 0.3, 0.3);
    run.train.steps = 3;
    run.train.batch_size = 1;
    run.train.eval_interval = 3;
    run.train.eval_window_cap = 4;
    run.train.early_stop_min_f1 = None;
    let dataset = Dataset::generate(&run).unwrap();
    let mut table = Vec::new();
    for (name, toggles) in rows {
        let mut row_run = run.clone();
        row_run.modality_toggles = toggles;
        let outcome = train_model(&row_run, &dataset, |_| {}).unwrap();
        let report = orscene_core::train::evaluate_split(
            &outcome.model,
            &outcome.store,
            &dataset,
            "test",
            &dataset.split.test,
            &row_run,
            Some(4),
        )
        .unwrap();
        table.push((name, report.next_action.macro_f1, report.robot_phase.macro_f1));
    }
    assert_eq!(table.len(), 6);
    let monotone =
        |pick: fn(&(String, f64, f64)) -> f64| table.windows(2).all(|w| pick(&w[1]) >= pick(&w[0]));
    let trend_action = monotone(|r| r.1);
    let trend_phase = monotone(|r| r.2);
    for (name, action, phase) in &table {
        println!("  ablation {name:<12} next_action {action:.3} robot_phase {phase:.3}");
    }
    pass(
        "14 ablation-harness",
        format!(
            "6 incremental rows; trend (reported, not asserted): action monotone = {trend_action}, phase monotone = {trend_phase}"
        ),
    );
}

/// Ensures Model::init stays in sync with a11/a12: the gradient and oracle
/// tests above use hand-built complexes, while the pipeline path must also
/// accept the generator's windows end to end at a tiny budget.
#[test]
fn a15_pipeline_smoke_with_visual_grounding() {
    let _g = gate();
    let mut run = RunConfig::default();
    run.model.hat.d_model = 16;
    run.model.hat.heads = 2;
    run.model.hat.d_r = 4;
    run.data.episodes = 2;
    run.data.split = (0.5, 0.5, 0.0);
    run.train.steps = 2;
    run.train.batch_size = 1;
    run.train.eval_interval = 2;
    run.train.eval_window_cap = 2;
    run.train.early_stop_min_f1 = None;
    let dataset = Dataset::generate(&run).unwrap();
    let outcome = train_model(&run, &dataset, |_| {}).unwrap();
    assert_eq!(outcome.steps_run, 2);
    let (model, store) = Model::init(&run).unwrap();
    let frames = &dataset.episodes[0].frames[0..run.build.window_t];
    let frozen = model.build_frozen_window(frames, &store).unwrap();
    assert!(frozen.complex.len() > 0);
    println!("extra pipeline-smoke: PASS (grounded windows train and rebuild)");
}
