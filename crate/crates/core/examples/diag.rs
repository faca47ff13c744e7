// Temporary diagnostic: cross-MMD between synthesized and real per-class
// features, plus classification routing, for a trained run directory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use zshot_core::autodiff::Tape;
use zshot_core::backbone::encode;
use zshot_core::config::ExperimentConfig;
use zshot_core::generator::{median_pairwise_sq_dist, mmd_loss, synthesize, GenLossConfig};
use zshot_core::pipeline::{corpus_from_disk, load_model, OutputLayout};

fn main() {
    let root = std::env::args().nth(1).expect("usage: diag <run_dir> [seed] [config]");
    let mut cfg = match std::env::args().nth(3) {
        Some(path) => ExperimentConfig::from_file(std::path::Path::new(&path)).unwrap(),
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = std::env::args().nth(2) {
        cfg.seed = seed.parse().unwrap();
    }
    let layout = OutputLayout::new(PathBuf::from(root));
    let corpus = corpus_from_disk(&layout.corpus_dir(), &cfg).unwrap();
    let model = load_model(&layout, &cfg, &corpus).unwrap();

    // real per-class pools from TEST scenes
    let mut real: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for scene in &corpus.test {
        let fs = encode(scene, &model.backbone).unwrap();
        for i in 0..fs.n {
            real.entry(fs.labels[i]).or_default().extend_from_slice(fs.row(i));
        }
    }
    let d = cfg.d;
    let mut gen_cfg = GenLossConfig::default();
    gen_cfg.noise_scale = cfg.noise_scale;

    // one global bandwidth so MMD values compare across columns
    let mut all_rows: Vec<f64> = Vec::new();
    for rows in real.values() {
        all_rows.extend_from_slice(rows);
    }
    let global_n = all_rows.len() / d;
    let sub: Vec<f64> = all_rows[..(global_n.min(800)) * d].to_vec();
    let global_median = median_pairwise_sq_dist(&sub, sub.len() / d, d);

    println!("split seen={:?} unseen={:?}", corpus.split.seen, corpus.split.unseen);
    println!("rows: synth class, cols: real class, entries: mmd (lower = closer)");
    print!("{:>10}", "");
    for (&c, _) in &real {
        print!("{:>9}", corpus.class_names[c]);
    }
    println!();
    for c_synth in 0..corpus.split.n_classes() {
        let fake = synthesize(
            c_synth,
            256,
            &corpus.semantics,
            &model.bank,
            &model.generator,
            &gen_cfg,
            999,
        )
        .unwrap();
        print!(
            "{:>8}{}",
            corpus.class_names[c_synth],
            if corpus.split.is_seen(c_synth) { "  " } else { " u" }
        );
        for (_, rows) in &real {
            let n = rows.len() / d;
            let mut tape = Tape::new();
            let r = tape.constant((n, d), rows.clone()).unwrap();
            let f = tape.constant((fake.n, d), fake.features.clone()).unwrap();
            let bws: Vec<f64> = [1.0, 4.0, 16.0].iter().map(|s| s * global_median).collect();
            let loss = mmd_loss(&mut tape, r, f, &bws).unwrap();
            print!("{:>9.4}", tape.item(loss));
        }
        println!();
    }

    // ceiling: classify against per-class MEAN VISUAL distributions (oracle
    // in place of semantics). high diagonal => re-representation separates.
    if let Some(align) = &model.align {
        use zshot_core::alignment::{classify, rerepresent_values};
        use zshot_core::generator::SimilarityKind;
        let m = model.bank.m;
        let n_classes = corpus.split.n_classes();
        let mut sums = vec![vec![0.0f64; m]; n_classes];
        let mut counts = vec![0usize; n_classes];
        let mut dists_all: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
        for scene in &corpus.test {
            let fs = encode(scene, &model.backbone).unwrap();
            let dists = rerepresent_values(&fs.features, fs.n, d, &model.bank, &align.psi, &align.phi).unwrap();
            for i in 0..fs.n {
                let l = fs.labels[i];
                counts[l] += 1;
                for j in 0..m { sums[l][j] += dists[i*m+j]; }
            }
            dists_all.push((dists, fs.labels.clone()));
        }
        let mut oracle = vec![0.0; n_classes*m];
        for c in 0..n_classes {
            for j in 0..m { oracle[c*m+j] = sums[c][j] / counts[c].max(1) as f64; }
        }
        let mut conf = vec![vec![0u64; n_classes]; n_classes];
        for (dists, labels) in &dists_all {
            let preds = classify(dists, labels.len(), &oracle, n_classes, m, SimilarityKind::Cosine, None);
            for (i,&p) in preds.iter().enumerate() { conf[labels[i]][p] += 1; }
        }
        println!("oracle-semantics confusion (rows true):");
        for (c,row) in conf.iter().enumerate() {
            let total: u64 = row.iter().sum();
            let correct = row[c];
            println!("  {:>8}: {:>5.1}%  {:?}", corpus.class_names[c], 100.0*correct as f64/total.max(1) as f64, row);
        }
    }

    // transfer ceiling: classify with class prototypes taken from the
    // SYNTHESIZED features' mean visual distributions
    if let Some(align) = &model.align {
        use zshot_core::alignment::{classify, rerepresent_values};
        use zshot_core::generator::SimilarityKind;
        let m = model.bank.m;
        let n_classes = corpus.split.n_classes();
        let mut proto = vec![0.0; n_classes * m];
        for c in 0..n_classes {
            let fake = synthesize(c, 512, &corpus.semantics, &model.bank, &model.generator, &gen_cfg, 777).unwrap();
            let dists = rerepresent_values(&fake.features, fake.n, d, &model.bank, &align.psi, &align.phi).unwrap();
            for i in 0..fake.n {
                for j in 0..m { proto[c*m+j] += dists[i*m+j] / fake.n as f64; }
            }
        }
        let mut conf = vec![vec![0u64; n_classes]; n_classes];
        for scene in &corpus.test {
            let fs = encode(scene, &model.backbone).unwrap();
            let dists = rerepresent_values(&fs.features, fs.n, d, &model.bank, &align.psi, &align.phi).unwrap();
            let preds = classify(&dists, fs.n, &proto, n_classes, m, SimilarityKind::Cosine, None);
            for (i,&p) in preds.iter().enumerate() { conf[fs.labels[i]][p] += 1; }
        }
        println!("synth-prototype confusion (rows true):");
        for (c,row) in conf.iter().enumerate() {
            let total: u64 = row.iter().sum();
            println!("  {:>8}: {:>5.1}%  {:?}", corpus.class_names[c], 100.0*row[c] as f64/total.max(1) as f64, row);
        }
    }

    // feature scale sanity
    for (&c, rows) in &real {
        let n = rows.len() / d;
        let mean: f64 = rows.iter().sum::<f64>() / rows.len() as f64;
        let std: f64 =
            (rows.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows.len() as f64).sqrt();
        let median = median_pairwise_sq_dist(rows, n, d);
        println!(
            "real {:>8}: n={:>5} mean {:+.3} std {:.3} median_sq_dist {:.3}",
            corpus.class_names[c], n, mean, std, median
        );
    }
}
