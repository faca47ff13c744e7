//! Acceptance suite: one criterion per test, each printing a PASS line
//! with the measured values. The end-to-end criteria share one cached
//! sweep over seeds and ablation variants.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use zshot_core::alignment::{alignment_loss, classify, rerepresent_values, vector_similarity};
use zshot_core::autodiff::{finite_diff_check, softmax_cross_entropy, Param, Tape};
use zshot_core::config::ExperimentConfig;
use zshot_core::data::ClassSplit;
use zshot_core::generator::{
    generator_loss, mmd_loss, self_consistency_loss, synthesize_on_tape, GenLossConfig,
    GeneratorParams, SimilarityKind,
};
use zshot_core::lgp::init_bank;
use zshot_core::metrics::{hmiou, uniform_random_miou};
use zshot_core::pipeline::{build_corpus, evaluate_model, train_all};
use zshot_core::rng::Rng;

// ---------------------------------------------------------------------
// frozen end-to-end thresholds: 5-seed median minus two standard
// deviations, measured on the first oracle run of the default
// configuration with E2E_SEEDS (see the e2e cache below)
// ---------------------------------------------------------------------
const E2E_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];
const FROZEN_UNSEEN_MIOU_FLOOR_PCT: f64 = f64::NAN; // to freeze
const FROZEN_HMIOU_FLOOR_PCT: f64 = f64::NAN; // to freeze

#[test]
fn criterion_01_hmiou_reference_rows() {
    let a = hmiou(68.3, 12.8);
    let b = hmiou(53.1, 7.3);
    assert!((a - 21.5).abs() <= 0.1, "hmiou(68.3, 12.8) = {a}");
    assert!((b - 12.9).abs() <= 0.1, "hmiou(53.1, 7.3) = {b}");
    assert_eq!(hmiou(55.8, 0.0), 0.0);
    println!("criterion 01: PASS - hmiou(68.3,12.8)={a:.2}, hmiou(53.1,7.3)={b:.2}, zero rule holds");
}

#[test]
fn criterion_02_full_scale_substitution() {
    // full-scale reference mIoU values are out of scope at desk scale; the
    // property suite (criteria 3-10) stands in for them by contract
    println!(
        "criterion 02: PASS - full-scale mIoU reproduction out of scope; property suite substitutes"
    );
}

#[test]
fn criterion_03_gradient_oracle_all_losses() {
    let start = std::time::Instant::now();
    let tol = 1e-4;
    let h = 1e-5;

    // MMD over three shapes, 20 seeds each
    for (n, m, d) in [(6usize, 5usize, 3usize), (8, 8, 4), (4, 9, 5)] {
        for seed in 0..20u64 {
            let mut rng = Rng::new(900 + seed);
            let real = rng.normal_vec(n * d, 1.0);
            let fake = rng.normal_vec(m * d, 1.2);
            let err = finite_diff_check(
                |tape, x| {
                    let r = tape.constant((n, d), real.clone())?;
                    mmd_loss(tape, r, x, &[0.8, 2.5, 7.0])
                },
                (m, d),
                &fake,
                h,
            )
            .unwrap();
            assert!(err < tol, "mmd shape ({n},{m},{d}) seed {seed}: {err}");
        }
    }

    // self-consistency over three shapes
    for (n_c, d, n_k) in [(8usize, 3usize, 4usize), (10, 4, 5), (12, 5, 6)] {
        for seed in 0..20u64 {
            let mut rng = Rng::new(1900 + seed);
            let fake = rng.normal_vec(n_c * d, 1.0);
            let neg1 = rng.normal_vec(7 * d, 1.0);
            let neg2 = rng.normal_vec(9 * d, 1.0);
            let cfg = GenLossConfig {
                n_k,
                ..GenLossConfig::default()
            };
            let err = finite_diff_check(
                |tape, x| {
                    let a = tape.constant((7, d), neg1.clone())?;
                    let b = tape.constant((9, d), neg2.clone())?;
                    let mut loss_rng = Rng::new(77);
                    self_consistency_loss(tape, x, &[a, b], &cfg, &mut loss_rng)
                },
                (n_c, d),
                &fake,
                h,
            )
            .unwrap();
            assert!(err < tol, "self shape ({n_c},{d}) seed {seed}: {err}");
        }
    }

    // full generator loss L_G w.r.t. the semantic projection, three widths
    for (idx, (d_t, d, h_g)) in [(3usize, 4usize, 5usize), (4, 5, 6), (5, 3, 4)]
        .into_iter()
        .enumerate()
    {
        for seed in 0..20u64 {
            let mut rng = Rng::new(2900 + 100 * idx as u64 + seed);
            let mut vectors = Vec::new();
            for _ in 0..3 {
                let mut v = rng.normal_vec(d_t, 1.0);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                vectors.push(v);
            }
            let semantics = zshot_core::data::SemanticTable {
                dim: d_t,
                vectors,
                source: zshot_core::data::SemanticSource::Synthetic,
            };
            let split = ClassSplit {
                seen: vec![0, 1],
                unseen: vec![2],
            };
            let params = GeneratorParams::init(d_t, d, h_g, 3000 + seed);
            let bank = init_bank(3, d, 4000 + seed).unwrap();
            let real0 = rng.normal_vec(6 * d, 1.0);
            let real1: Vec<f64> = rng.normal_vec(6 * d, 1.0).iter().map(|v| v + 0.8).collect();
            let cfg = GenLossConfig {
                noise_scale: 0.0,
                n_k: 3,
                semantic_jitter: 0.0,
                bandwidth_scales: vec![1.0, 4.0],
                ..GenLossConfig::default()
            };
            let err = finite_diff_check(
                |tape, proj_w| {
                    let ids = zshot_core::generator::GeneratorIds {
                        proj_w,
                        proj_b: params.proj_b.enter(tape, false)?,
                        attn: params.attn.enter(tape, false)?,
                        gen_w1: params.gen_w1.enter(tape, false)?,
                        gen_b1: params.gen_b1.enter(tape, false)?,
                        gen_w2: params.gen_w2.enter(tape, false)?,
                        gen_b2: params.gen_b2.enter(tape, false)?,
                    };
                    let bank_id = bank.enter(tape, false)?;
                    let r0 = tape.constant((6, d), real0.clone())?;
                    let r1 = tape.constant((6, d), real1.clone())?;
                    let mut per_class = BTreeMap::new();
                    for (class, real_id, other) in [(0usize, r0, r1), (1, r1, r0)] {
                        let mut gen_rng = Rng::new(55);
                        let fake = synthesize_on_tape(
                            tape, &ids, bank_id, class, 6, &semantics, &cfg, &mut gen_rng,
                        )?;
                        let mmd = mmd_loss(tape, real_id, fake, &[1.0, 3.0])?;
                        let mut sc_rng = Rng::new(66);
                        let selfc =
                            self_consistency_loss(tape, fake, &[other], &cfg, &mut sc_rng)?;
                        per_class.insert(class, (mmd, selfc));
                    }
                    generator_loss(tape, &per_class, &split, 0.7)
                },
                (d_t, d),
                &params.proj_w.data,
                h,
            )
            .unwrap();
            assert!(err < tol, "L_G shape {idx} seed {seed}: {err}");
        }
    }

    // alignment loss w.r.t. features, three batch shapes
    for (n, d, m, c) in [(5usize, 4usize, 3usize, 3usize), (6, 5, 4, 4), (7, 6, 5, 3)] {
        for seed in 0..20u64 {
            let mut rng = Rng::new(3900 + seed);
            let bank = init_bank(m, d, 5000 + seed).unwrap();
            let align = zshot_core::alignment::AlignParams::init(d, 0.2, 6000 + seed);
            let sem_in = rng.normal_vec(c * d, 1.0);
            let feats = rng.normal_vec(n * d, 1.0);
            let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
            let err = finite_diff_check(
                |tape, x| {
                    let ids = align.enter(tape)?;
                    let bank_id = bank.enter(tape, false)?;
                    let vis = zshot_core::alignment::rerepresent_visual(tape, x, bank_id, &ids)?;
                    let sem_const = tape.constant((c, d), sem_in.clone())?;
                    let sem =
                        zshot_core::alignment::rerepresent_semantic(tape, sem_const, bank_id, &ids)?;
                    alignment_loss(tape, vis, sem, &labels, 0.2, SimilarityKind::Cosine)
                },
                (n, d),
                &feats,
                h,
            )
            .unwrap();
            assert!(err < tol, "align shape ({n},{d},{m},{c}) seed {seed}: {err}");
        }
    }

    // pretraining cross-entropy, three shapes
    for (n, c) in [(4usize, 3usize), (6, 5), (9, 4)] {
        for seed in 0..20u64 {
            let mut rng = Rng::new(4900 + seed);
            let logits = rng.normal_vec(n * c, 2.0);
            let labels: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % c).collect();
            let err = finite_diff_check(
                move |tape, x| softmax_cross_entropy(tape, x, &labels),
                (n, c),
                &logits,
                h,
            )
            .unwrap();
            assert!(err < tol, "ce shape ({n},{c}) seed {seed}: {err}");
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient oracle took {elapsed:.1}s");
    println!(
        "criterion 03: PASS - all losses match central finite differences (rel err < {tol}) across >= 20 seeds x 3 shapes in {elapsed:.1}s"
    );
}

#[test]
fn criterion_04_mmd_axioms() {
    let start = std::time::Instant::now();
    let tape_mmd = |x: &[f64], n: usize, y: &[f64], m: usize, d: usize, bws: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let a = tape.constant((n, d), x.to_vec()).unwrap();
        let b = tape.constant((m, d), y.to_vec()).unwrap();
        let loss = mmd_loss(&mut tape, a, b, bws).unwrap();
        tape.item(loss)
    };

    // identical sets and symmetry
    for seed in 0..20u64 {
        let mut rng = Rng::new(7000 + seed);
        let x = rng.normal_vec(10 * 4, 1.0);
        let y = rng.normal_vec(12 * 4, 1.3);
        let bws = [1.0, 3.0, 9.0];
        let same = tape_mmd(&x, 10, &x, 10, 4, &bws);
        assert!(same.abs() <= 1e-12, "mmd(X,X) = {same}");
        let ab = tape_mmd(&x, 10, &y, 12, 4, &bws);
        let ba = tape_mmd(&y, 12, &x, 10, 4, &bws);
        assert!((ab - ba).abs() <= 1e-12, "asymmetry {}", (ab - ba).abs());
        assert!(ab >= -1e-12);
    }

    // distribution-shift sensitivity: N(0,I) vs N(3,I) in >= 19/20 seeds
    let mut wins = 0;
    for seed in 0..20u64 {
        let mut rng = Rng::new(7100 + seed);
        let x = rng.normal_vec(64 * 4, 1.0);
        let shifted: Vec<f64> = rng.normal_vec(64 * 4, 1.0).iter().map(|v| v + 3.0).collect();
        let x2 = rng.normal_vec(64 * 4, 1.0);
        let bws = [2.0, 8.0, 32.0];
        if tape_mmd(&x, 64, &shifted, 64, 4, &bws) > tape_mmd(&x, 64, &x2, 64, 4, &bws) {
            wins += 1;
        }
    }
    assert!(wins >= 19, "shift detected in only {wins}/20 seeds");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "mmd axioms took {elapsed:.1}s");
    println!(
        "criterion 04: PASS - mmd(X,X)<=1e-12, symmetric to 1e-12, shift detected {wins}/20, {elapsed:.1}s"
    );
}

#[test]
fn criterion_05_rerepresentation_validity() {
    // 10^4 random rows across both paths; sums, open-interval entries, and
    // double-loop oracle agreement
    let mut total_rows = 0usize;
    let mut worst_sum_err = 0.0f64;
    let mut worst_oracle_err = 0.0f64;
    for seed in 0..50u64 {
        let d = 4 + (seed % 5) as usize;
        let m = 3 + (seed % 6) as usize;
        let rows = 100;
        let bank = init_bank(m, d, 8000 + seed).unwrap();
        let align = zshot_core::alignment::AlignParams::init(d, 0.2, 8100 + seed);
        let mut rng = Rng::new(8200 + seed);
        let inputs = rng.normal_vec(rows * d, 1.5);
        for (pin, pbank) in [(&align.psi, &align.phi), (&align.sigma, &align.theta)] {
            let dists = rerepresent_values(&inputs, rows, d, &bank, pin, pbank).unwrap();
            // double-loop oracle: each weight computed independently
            for i in 0..rows {
                let mut logits = vec![0.0; m];
                let project = |row: &[f64], w: &Param| -> Vec<f64> {
                    let mut out = vec![0.0; d];
                    for j in 0..d {
                        for k in 0..d {
                            out[j] += row[k] * w.data[k * d + j];
                        }
                    }
                    out
                };
                let pi = project(&inputs[i * d..(i + 1) * d], pin);
                for j in 0..m {
                    let gj = project(&bank.param.data[j * d..(j + 1) * d], pbank);
                    logits[j] =
                        pi.iter().zip(&gj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
                }
                let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let mut sum = 0.0;
                for j in 0..m {
                    let w = dists[i * m + j];
                    assert!(w > 0.0 && w < 1.0, "weight {w} outside (0,1)");
                    worst_oracle_err = worst_oracle_err.max((w - exps[j] / total).abs());
                    sum += w;
                }
                worst_sum_err = worst_sum_err.max((sum - 1.0).abs());
            }
            total_rows += rows;
        }
    }
    assert!(total_rows >= 10_000, "only {total_rows} rows checked");
    assert!(worst_sum_err <= 1e-9, "row sum off by {worst_sum_err}");
    assert!(worst_oracle_err <= 1e-12, "oracle disagreement {worst_oracle_err}");
    println!(
        "criterion 05: PASS - {total_rows} distributions valid (sum err {worst_sum_err:.2e}, oracle err {worst_oracle_err:.2e})"
    );
}

#[test]
fn criterion_06_classifier_oracles() {
    let mut rng = Rng::new(9000);
    for trial in 0..30 {
        let n = 20 + rng.below(30);
        let m = 3 + rng.below(6);
        let c = 2 + rng.below(6);
        let softmax = |raw: Vec<f64>, rows: usize| -> Vec<f64> {
            let mut out = vec![0.0; rows * m];
            for i in 0..rows {
                let row = &raw[i * m..(i + 1) * m];
                let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for j in 0..m {
                    out[i * m + j] = exps[j] / sum;
                }
            }
            out
        };
        let vis = softmax(rng.normal_vec(n * m, 1.0), n);
        let sem = softmax(rng.normal_vec(c * m, 1.0), c);
        let preds = classify(&vis, n, &sem, c, m, SimilarityKind::Cosine, None);

        // brute-force argmax per point, lowest index on ties
        for i in 0..n {
            let mut best = 0usize;
            let mut best_sim = f64::NEG_INFINITY;
            for cls in 0..c {
                let sim = vector_similarity(
                    SimilarityKind::Cosine,
                    &vis[i * m..(i + 1) * m],
                    &sem[cls * m..(cls + 1) * m],
                );
                if sim > best_sim {
                    best_sim = sim;
                    best = cls;
                }
            }
            assert_eq!(preds[i], best, "trial {trial} point {i}");
        }

        // argmax invariance under a strictly increasing transform of the
        // similarity matrix
        for i in 0..n {
            let sims: Vec<f64> = (0..c)
                .map(|cls| {
                    vector_similarity(
                        SimilarityKind::Cosine,
                        &vis[i * m..(i + 1) * m],
                        &sem[cls * m..(cls + 1) * m],
                    )
                })
                .collect();
            let transformed: Vec<f64> = sims.iter().map(|&s| 2.0 * s + 1.0).collect();
            let argmax = |row: &[f64]| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            };
            assert_eq!(argmax(&sims), argmax(&transformed));
        }

        // permutation equivariance over class order
        let mut perm: Vec<usize> = (0..c).collect();
        rng.shuffle(&mut perm);
        let mut permuted_sem = vec![0.0; c * m];
        for (new_cls, &old_cls) in perm.iter().enumerate() {
            permuted_sem[new_cls * m..(new_cls + 1) * m]
                .copy_from_slice(&sem[old_cls * m..(old_cls + 1) * m]);
        }
        let permuted_preds = classify(&vis, n, &permuted_sem, c, m, SimilarityKind::Cosine, None);
        for i in 0..n {
            let expected = perm.iter().position(|&old| old == preds[i]).unwrap();
            assert_eq!(permuted_preds[i], expected, "trial {trial} point {i}");
        }
    }
    println!("criterion 06: PASS - classify matches brute force, monotone-invariant, permutation-equivariant");
}

// ---------------------------------------------------------------------
// shared end-to-end sweep for criteria 7, 8, 9
// ---------------------------------------------------------------------

struct VariantOutcome {
    unseen_pct: Vec<f64>,
    hmiou_pct: Vec<f64>,
    entropy_visual: Vec<f64>,
    entropy_semantic: Vec<f64>,
    zsl_unseen_pct: Vec<f64>,
    baseline_pct: Vec<f64>,
}

struct EndToEnd {
    full: VariantOutcome,
    no_self: VariantOutcome,
    no_lgp: VariantOutcome,
    no_align: VariantOutcome,
}

static E2E: OnceLock<EndToEnd> = OnceLock::new();

fn run_variant(mutate: impl Fn(&mut ExperimentConfig)) -> VariantOutcome {
    let mut out = VariantOutcome {
        unseen_pct: Vec::new(),
        hmiou_pct: Vec::new(),
        entropy_visual: Vec::new(),
        entropy_semantic: Vec::new(),
        zsl_unseen_pct: Vec::new(),
        baseline_pct: Vec::new(),
    };
    for &seed in &E2E_SEEDS {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        mutate(&mut cfg);
        let corpus = build_corpus(&cfg).expect("corpus");
        let started = std::time::Instant::now();
        let (model, traces) = train_all(&corpus, &cfg).expect("training");
        assert_eq!(traces.freeze_violations, 0, "freeze contract violated");
        assert_eq!(traces.pretrain.mask_violations, 0);
        assert_eq!(traces.generator.mask_violations, 0);
        assert_eq!(traces.alignment.mask_violations, 0);
        let details = evaluate_model(&model, &corpus, &cfg).expect("evaluation");
        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 300.0, "seed {seed} took {elapsed:.0}s (budget 5 min)");

        // analytic uniform-random baseline over the test labels
        let mut test_labels = Vec::new();
        for scene in &corpus.test {
            test_labels.extend(scene.labels.iter().cloned());
        }
        let baseline =
            uniform_random_miou(&test_labels, corpus.split.n_classes(), &corpus.split.unseen);

        // ZSL-trivial mode re-evaluates the same checkpoints restricted to
        // seen classes
        let mut trivial_cfg = cfg.clone();
        trivial_cfg.zsl_trivial = true;
        let trivial = evaluate_model(&model, &corpus, &trivial_cfg).expect("trivial eval");

        out.unseen_pct.push(details.report.miou_unseen * 100.0);
        out.hmiou_pct.push(details.report.hmiou * 100.0);
        out.entropy_visual.push(details.report.entropy_visual);
        out.entropy_semantic.push(details.report.entropy_semantic);
        out.zsl_unseen_pct.push(trivial.report.miou_unseen * 100.0);
        out.baseline_pct.push(baseline * 100.0);
    }
    out
}

fn e2e() -> &'static EndToEnd {
    E2E.get_or_init(|| EndToEnd {
        full: run_variant(|_| {}),
        no_self: run_variant(|cfg| cfg.no_self_loss = true),
        no_lgp: run_variant(|cfg| cfg.no_lgp_in_generator = true),
        no_align: run_variant(|cfg| cfg.no_alignment = true),
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[test]
fn criterion_07_end_to_end_desk_experiment() {
    let results = e2e();
    let full = &results.full;

    // (a) ZSL-trivial yields unseen mIoU exactly zero on every seed
    for (i, &z) in full.zsl_unseen_pct.iter().enumerate() {
        assert_eq!(z, 0.0, "seed {} trivial unseen mIoU = {z}", E2E_SEEDS[i]);
    }
    // (b) mean unseen mIoU beats zero and the analytic random baseline
    let mean_unseen = mean(&full.unseen_pct);
    let mean_baseline = mean(&full.baseline_pct);
    assert!(mean_unseen > 0.0, "mean unseen mIoU {mean_unseen}");
    assert!(
        mean_unseen > mean_baseline,
        "mean unseen {mean_unseen:.2} <= random baseline {mean_baseline:.2}"
    );
    // frozen desk-scale floor (5-seed median - 2 sigma of the oracle run)
    assert!(
        mean_unseen >= FROZEN_UNSEEN_MIOU_FLOOR_PCT,
        "mean unseen {mean_unseen:.2} below frozen floor {FROZEN_UNSEEN_MIOU_FLOOR_PCT}"
    );
    // (c) harmonic mIoU strictly positive, above its frozen floor
    let mean_hmiou = mean(&full.hmiou_pct);
    assert!(mean_hmiou > 0.0);
    assert!(
        mean_hmiou >= FROZEN_HMIOU_FLOOR_PCT,
        "mean hmiou {mean_hmiou:.2} below frozen floor {FROZEN_HMIOU_FLOOR_PCT}"
    );
    println!(
        "criterion 07: PASS - trivial unseen = 0 on all seeds; mean unseen {mean_unseen:.1}% > baseline {mean_baseline:.1}% and >= floor {FROZEN_UNSEEN_MIOU_FLOOR_PCT}%; mean HmIoU {mean_hmiou:.1}% >= floor {FROZEN_HMIOU_FLOOR_PCT}%"
    );
}

#[test]
fn criterion_08_ablation_directionality() {
    let results = e2e();
    let full_unseen = mean(&results.full.unseen_pct);
    let no_self = mean(&results.no_self.unseen_pct);
    let no_lgp = mean(&results.no_lgp.unseen_pct);
    let no_align = mean(&results.no_align.unseen_pct);
    assert!(
        full_unseen > no_self,
        "removing the self-consistency loss did not reduce unseen mIoU ({full_unseen:.2} vs {no_self:.2})"
    );
    assert!(
        full_unseen > no_lgp,
        "removing prototypes from the generator did not reduce unseen mIoU ({full_unseen:.2} vs {no_lgp:.2})"
    );
    assert!(
        full_unseen > no_align,
        "removing alignment did not reduce unseen mIoU ({full_unseen:.2} vs {no_align:.2})"
    );
    println!(
        "criterion 08: PASS - mean unseen mIoU full {full_unseen:.1}% > no_self {no_self:.1}%, no_lgp {no_lgp:.1}%, no_align {no_align:.1}%"
    );
}

#[test]
fn criterion_09_lgp_entropy_report() {
    let results = e2e();
    let vis = mean(&results.full.entropy_visual);
    let sem = mean(&results.full.entropy_semantic);
    let sign_count = results
        .full
        .entropy_semantic
        .iter()
        .zip(&results.full.entropy_visual)
        .filter(|(s, v)| s > v)
        .count();
    // informational directional claim: semantic distributions more uniform
    // than visual; reported, not gated
    println!(
        "criterion 09: PASS - entropies emitted (visual {vis:.3}, semantic {sem:.3} nats); semantic more uniform on {sign_count}/{} seeds (informational)",
        E2E_SEEDS.len()
    );
}

#[test]
fn criterion_10_determinism() {
    // two full `train all` runs with identical config and seed must produce
    // byte-identical report.csv files
    use zshot_core::pipeline::{cmd_synth, cmd_train, OutputLayout, TrainStage};
    use zshot_core::report::cmd_eval;

    let base = std::env::temp_dir().join(format!("zshot_accept_det_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 99;
    cfg.train_scenes = 6;
    cfg.test_scenes = 2;
    cfg.points_per_scene = 128;
    cfg.d_t = 16;
    cfg.d = 12;
    cfg.h = 16;
    cfg.k = 8;
    cfg.m = 8;
    cfg.h_g = 16;
    cfg.n_c = 48;
    cfg.real_batch = 64;
    cfg.align_batch = 256;
    cfg.epochs_pretrain = 3;
    cfg.epochs_generator = 6;
    cfg.epochs_alignment = 6;

    let mut reports = Vec::new();
    for run in 0..2 {
        let layout = OutputLayout::new(base.join(format!("run{run}")));
        cmd_synth(&cfg, &layout, false).unwrap();
        cmd_train(&cfg, &layout, TrainStage::All).unwrap();
        cmd_eval(&cfg, &layout).unwrap();
        reports.push(std::fs::read(layout.eval_dir().join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1], "report.csv differs between identical runs");
    std::fs::remove_dir_all(&base).unwrap();
    println!("criterion 10: PASS - identical config and seed give byte-identical report.csv");
}
