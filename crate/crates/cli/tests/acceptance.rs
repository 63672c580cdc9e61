//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. The trained-model criteria (3 to 7) read a
//! single `blockkey repro` report at full data scale, restricted to the block
//! sizes those criteria look at.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use blockkey::analysis::key_sensitivity_with;
use blockkey::attacks::{estimate_key_with, finetune_new_dataset, index_pairs, EstimateOptions, TransferMode};
use blockkey::dataset::generate_synthetic;
use blockkey::experiment::{ExperimentConfig, ReproReport};
use blockkey::learner::net::softmax;
use blockkey::learner::{self, grad_check};
use blockkey::rng::DetRng;
use blockkey::transforms::{apply_np, apply_shf};
use blockkey::{
    integrate, key_space, pair_count, segment, Classifier, FeistelCipher, ImageTensor, KeySet,
    TrainConfig, Transform, TransformPipeline, TransformSet,
};
use num_bigint::BigUint;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_image(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = DetRng::new(seed);
    let bytes: Vec<u8> = (0..c * h * w).map(|_| rng.index(256) as u8).collect();
    ImageTensor::from_u8(c, h, w, &bytes).unwrap()
}

fn set(name: &str) -> TransformSet {
    name.parse().unwrap()
}

fn transform_suite() -> Check {
    let start = Instant::now();
    let mut cases = 0;
    for m in [1, 2, 4, 8] {
        for c in [1, 3] {
            for seed in 0..5 {
                let image = random_image(c, 16, 24, seed);
                let blocks = segment(&image, m).unwrap();
                ensure(integrate(&blocks, m).unwrap() == image, format!("round trip M={m} c={c}"))?;

                // scatter against raw pixel coordinates, k = (r*M + q)*c + ch
                let key = KeySet::generate(m, c, set("SHF+NP"), seed).unwrap();
                let alpha = key.alpha().unwrap();
                let shf = apply_shf(&blocks, alpha).unwrap();
                for (bi, bj) in [(0, 0), (1, 2), (16 / m - 1, 24 / m - 1)] {
                    let out = shf.block(bi, bj);
                    for r in 0..m {
                        for q in 0..m {
                            for ch in 0..c {
                                let k = (r * m + q) * c + ch;
                                let v = image.get(ch, bi * m + r, bj * m + q);
                                ensure(out[alpha[k]] == v, format!("scatter M={m} k={k}"))?;
                            }
                        }
                    }
                }

                let beta = key.beta().unwrap();
                let np = apply_np(&blocks, beta).unwrap();
                ensure(apply_np(&np, beta).unwrap() == blocks, "NP involution")?;
                for (src, dst) in blocks.blocks().zip(np.blocks()) {
                    for k in 0..src.len() {
                        let (a, b) = ((src[k] * 255.0).round() as u16, (dst[k] * 255.0).round() as u16);
                        ensure(if beta[k] { a + b == 255 } else { a == b }, "NP complement")?;
                    }
                }

                let p = TransformPipeline::new(key);
                ensure(p.invert(&p.transform(&image).unwrap()).unwrap() == image, "SHF+NP inverse")?;
                cases += 1;
            }
        }
    }
    for password in ["password", "secret", ""] {
        let cipher = FeistelCipher::new(password);
        let mut seen = [false; 1000];
        for n in 0..1000u16 {
            let e = cipher.encrypt(n).unwrap();
            ensure(e < 1000 && !seen[e as usize], format!("FFX not a bijection ({password:?})"))?;
            seen[e as usize] = true;
            ensure(cipher.decrypt(e).unwrap() == n, "FFX decrypt")?;
        }
    }
    // Reference values from python/tools/fpe_golden.py
    let cipher = FeistelCipher::new("password");
    for (n, e) in [(0, 484), (1, 365), (255, 213), (999, 971)] {
        ensure(cipher.encrypt(n).unwrap() == e, format!("golden {n} -> {e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("{cases} image cases, 3 ciphers, golden vectors, {:.1}s", elapsed.as_secs_f64()))
}

fn factorial(n: usize) -> BigUint {
    let mut acc = BigUint::from(1u32);
    for i in 1..=n {
        acc *= BigUint::from(i);
    }
    acc
}

fn all_permutations(n: usize) -> HashSet<Vec<u8>> {
    fn rec(prefix: &mut Vec<u8>, left: &mut Vec<u8>, out: &mut HashSet<Vec<u8>>) {
        if left.is_empty() {
            out.insert(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let x = left.remove(i);
            prefix.push(x);
            rec(prefix, left, out);
            prefix.pop();
            left.insert(i, x);
        }
    }
    let mut out = HashSet::new();
    rec(&mut Vec::new(), &mut (0..n as u8).collect(), &mut out);
    out
}

fn all_bitstrings(n: usize) -> HashSet<Vec<bool>> {
    (0u32..1 << n).map(|v| (0..n).map(|i| v >> i & 1 == 1).collect()).collect()
}

fn key_accounting() -> Check {
    let sets: Vec<TransformSet> = (1u8..8).map(|m| TransformSet::from_mask(m).unwrap()).collect();
    for m in [1, 2, 4, 8] {
        for c in [1, 3] {
            let n = c * m * m;
            for &s in &sets {
                let mut expect = BigUint::from(1u32);
                if s.contains(Transform::Shf) {
                    expect *= factorial(n);
                }
                for t in [Transform::Np, Transform::Ffx] {
                    if s.contains(t) {
                        expect *= BigUint::from(2u32).pow(n as u32);
                    }
                }
                ensure(key_space(m, c, s) == expect, format!("key space M={m} c={c} {s}"))?;
            }
            if n >= 2 {
                let pairs = index_pairs(n).count() as u64;
                ensure(pair_count(m, c).unwrap() == pairs, format!("pair count n={n}"))?;
                ensure(pairs == (n * (n - 1) / 2) as u64, "C(n,2)")?;
            }
        }
    }
    // brute force: n positions as one pixel with n channels
    for n in 1..=8 {
        let perms = all_permutations(n).len();
        let bits = all_bitstrings(n).len();
        ensure(key_space(1, n, set("SHF")) == BigUint::from(perms), format!("SHF n={n}"))?;
        ensure(key_space(1, n, set("NP")) == BigUint::from(bits), format!("NP n={n}"))?;
        ensure(key_space(1, n, set("FFX")) == BigUint::from(bits), format!("FFX n={n}"))?;
        if n <= 4 {
            let mut triples = HashSet::new();
            for a in all_permutations(n) {
                for b in all_bitstrings(n) {
                    for g in all_bitstrings(n) {
                        triples.insert((a.clone(), b.clone(), g));
                    }
                }
            }
            ensure(
                key_space(1, n, set("SHF+NP+FFX")) == BigUint::from(triples.len()),
                format!("SHF+NP+FFX n={n}"),
            )?;
        }
        if n >= 2 {
            let brute = (0..n).flat_map(|i| (0..n).filter(move |&j| j > i)).count() as u64;
            ensure(pair_count(1, n).unwrap() == brute, format!("pairs n={n}"))?;
        }
    }
    Ok("M in {1,2,4,8}, c in {1,3}, 7 transform sets; enumeration for n <= 8".into())
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn protection_gap(r: &ReproReport, per_combo: &[(String, Duration)]) -> Check {
    let base = r.baseline_accuracy;
    ensure(base >= 0.90, format!("baseline {} < 90%", pct(base)))?;
    let mut worst = Vec::new();
    let mut failures = Vec::new();
    for s in TransformSet::grid() {
        let row = r.row(s, 4).ok_or(format!("no {s} row at M=4"))?;
        ensure(r.config.incorrect_keys == 100, "incorrect key count")?;
        let mut bad = Vec::new();
        if row.correct < base - 0.10 {
            bad.push(format!("correct {}", pct(row.correct)));
        }
        if row.incorrect_mean > 0.45 {
            bad.push(format!("incorrect {}", pct(row.incorrect_mean)));
        }
        if row.plain > 0.60 {
            bad.push(format!("plain {}", pct(row.plain)));
        }
        if !bad.is_empty() {
            failures.push(format!("{s}: {}", bad.join(", ")));
        }
        worst.push(format!(
            "{s} {}/{}/{}",
            pct(row.correct),
            pct(row.incorrect_mean),
            pct(row.plain)
        ));
    }
    for (label, t) in per_combo {
        if *t > Duration::from_secs(300) {
            failures.push(format!("{label} took {t:?}"));
        }
    }
    ensure(failures.is_empty(), failures.join("; "))?;
    let slowest = per_combo.iter().map(|(_, t)| *t).max().unwrap_or_default();
    Ok(format!(
        "baseline {}; correct/incorrect/plain: {}; slowest combo {:.0}s",
        pct(base),
        worst.join(", "),
        slowest.as_secs_f64()
    ))
}

fn block_size_trend(r: &ReproReport) -> Check {
    let mut parts = Vec::new();
    for s in [set("SHF"), set("SHF+NP+FFX")] {
        let m2 = r.row(s, 2).ok_or(format!("no {s} M=2"))?.correct;
        let m8 = r.row(s, 8).ok_or(format!("no {s} M=8"))?.correct;
        ensure(m8 <= m2 + 0.02, format!("{s}: M=8 {} > M=2 {} + 2", pct(m8), pct(m2)))?;
        parts.push(format!("{s} M=2 {} M=8 {}", pct(m2), pct(m8)));
    }
    Ok(parts.join(", "))
}

fn key_estimation(r: &ReproReport) -> Check {
    // oracle: accuracy = fraction of key positions that match the true key
    for s in ["SHF", "NP", "FFX", "SHF+NP+FFX"] {
        let truth = KeySet::generate(2, 3, set(s), 11).unwrap();
        let init = truth.random_incorrect(12);
        let oracle = |k: &KeySet| -> blockkey::Result<f64> {
            let mut hits = 0;
            let mut total = 0;
            if let (Some(a), Some(b)) = (k.alpha(), truth.alpha()) {
                hits += a.iter().zip(b).filter(|(x, y)| x == y).count();
                total += a.len();
            }
            for (x, y) in [(k.beta(), truth.beta()), (k.gamma(), truth.gamma())] {
                if let (Some(a), Some(b)) = (x, y) {
                    hits += a.iter().zip(b).filter(|(x, y)| x == y).count();
                    total += a.len();
                }
            }
            Ok(hits as f64 / total as f64)
        };
        let (_, rep) = estimate_key_with(init, &EstimateOptions::default(), oracle).unwrap();
        ensure(rep.final_accuracy > rep.starting_accuracy, format!("oracle {s} did not improve"))?;
        let budget = 1 + set(s).len() * pair_count(2, 3).unwrap() as usize;
        ensure(rep.evaluations == budget, format!("oracle {s}: {} evaluations", rep.evaluations))?;
    }
    let find = |s: &str| {
        r.key_estimation
            .iter()
            .find(|e| e.artifact.contains(&format!("estimated {s} key")))
            .ok_or(format!("no {s} estimation"))
    };
    let (shf, ffx) = (find("SHF")?, find("FFX")?);
    let pairs = pair_count(r.config.attack_block_size, 3).unwrap() as usize;
    for e in [shf, ffx] {
        ensure(e.evaluations == pairs + 1, format!("budget {} != {}", e.evaluations, pairs + 1))?;
    }
    let (a_shf, a_ffx) = (shf.test_accuracy.unwrap(), ffx.test_accuracy.unwrap());
    ensure(a_ffx > a_shf, format!("FFX {} <= SHF {}", pct(a_ffx), pct(a_shf)))?;
    Ok(format!(
        "oracle improves for 4 sets; trained M=4: FFX {} > SHF {} with {} evaluations each",
        pct(a_ffx),
        pct(a_shf),
        pairs + 1
    ))
}

fn fixed_transfer_keeps_features() -> std::result::Result<(), String> {
    let data = generate_synthetic(4, 12, (3, 8, 8), 5).unwrap();
    let config = TrainConfig { epochs: 1, batch_size: 8, seed: 2, ..TrainConfig::default() };
    let fresh = Classifier::new((3, 8, 8), 4, 9).unwrap();
    let (source, _) = learner::train(fresh, &data, None, &config).unwrap();
    let new = generate_synthetic(3, 12, (3, 8, 8), 6).unwrap();
    let (tr, te) = new.split(0.75, 1).unwrap();
    let (tuned, _) = finetune_new_dataset(&source, &tr, &te, TransferMode::Fixed, &config, None).unwrap();
    ensure(tuned.feature_params() == source.feature_params(), "fixed mode moved feature weights")?;
    let (full, _) = finetune_new_dataset(&source, &tr, &te, TransferMode::Full, &config, None).unwrap();
    ensure(full.feature_params() != source.feature_params(), "full mode left features unchanged")
}

fn finetuning_attacks(r: &ReproReport) -> Check {
    let sizes = &r.config.forge_sizes;
    ensure(sizes[..] == [50, 200, 800], "forge sizes")?;
    let mut parts = Vec::new();
    for s in &r.config.forge_transforms {
        let correct = r.row(*s, r.config.attack_block_size).ok_or("missing row")?.correct;
        let runs: Vec<f64> = r
            .forged_key
            .iter()
            .filter(|e| e.artifact.starts_with(&format!("{s} model")))
            .map(|e| e.final_accuracy)
            .collect();
        ensure(runs.len() == 3, format!("{s}: {} forge runs", runs.len()))?;
        ensure(
            runs[0] <= correct - 0.20,
            format!("{s}: |D'|=50 reaches {} vs correct {}", pct(runs[0]), pct(correct)),
        )?;
        ensure(
            runs.windows(2).all(|w| w[1] >= w[0]),
            format!("{s}: not monotone {runs:?}"),
        )?;
        parts.push(format!("{s} {}", runs.iter().map(|&a| pct(a)).collect::<Vec<_>>().join("<=")));
    }
    let full = |src: &str| {
        r.transfer
            .iter()
            .find(|t| t.source == src && t.report.mode == Some(TransferMode::Full))
            .map(|t| t.report.final_accuracy)
            .ok_or(format!("no full transfer from {src}"))
    };
    let plain = full("plain")?;
    for s in &r.config.transfer_transforms {
        let a = full(&s.to_string())?;
        ensure(plain >= a, format!("transfer from {s} {} > plain {}", pct(a), pct(plain)))?;
    }
    fixed_transfer_keeps_features()?;
    Ok(format!(
        "forge {}; full transfer from plain {}; fixed mode keeps features",
        parts.join(", "),
        pct(plain)
    ))
}

fn key_sensitivity(r: &ReproReport) -> Check {
    let mut parts = Vec::new();
    for row in &r.sensitivity {
        let m = row.block_size;
        ensure(row.evaluations == 3 * m * m + 1, format!("{} M={m}: {} evaluations", row.transforms, row.evaluations))?;
    }
    for s in [set("SHF"), set("SHF+NP+FFX")] {
        let get = |m: usize| {
            r.sensitivity
                .iter()
                .find(|x| x.transforms == s && x.block_size == m)
                .map(|x| x.sensitivity)
                .ok_or(format!("no {s} sensitivity at M={m}"))
        };
        let (s4, s8) = (get(4)?, get(8)?);
        ensure(s4 > s8, format!("{s}: M=4 {s4:.4} <= M=8 {s8:.4}"))?;
        parts.push(format!("{s} M=4 {s4:.4} > M=8 {s8:.4}"));
    }
    // a "modification" that leaves the key as it was
    let data = generate_synthetic(4, 6, (3, 8, 8), 3).unwrap();
    let model = Classifier::new((3, 8, 8), 4, 4).unwrap();
    let key = KeySet::generate(4, 3, set("SHF+NP+FFX"), 8).unwrap();
    let base = TransformPipeline::new(key.clone());
    let res = key_sensitivity_with(&model, &data, &key, 1, |_| Ok(base.clone())).unwrap();
    ensure(res.sensitivity == 0.0, format!("degenerate sensitivity {}", res.sensitivity))?;
    ensure(res.evaluations == 49, "degenerate evaluation count")?;
    Ok(format!("{}; degenerate = 0; evaluations c*M*M+1", parts.join(", ")))
}

fn numerical_soundness(bin: &Path) -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let model = Classifier::new((3, 8, 8), 4, 100 + seed).unwrap();
        let image = random_image(3, 8, 8, seed);
        worst = worst.max(grad_check(&model, &image, seed as usize % 4));
    }
    ensure(worst < 1e-3, format!("gradient check max rel error {worst:e}"))?;

    let mut rng = DetRng::new(4);
    let mut drift: f64 = 0.0;
    for scale in [1.0, 10.0, 100.0, 1000.0] {
        for _ in 0..50 {
            let logits: Vec<f32> = (0..10).map(|_| (rng.uniform(-1.0, 1.0) * scale) as f32).collect();
            let sum: f64 = softmax(&logits).iter().map(|&p| f64::from(p)).sum();
            drift = drift.max((sum - 1.0).abs());
        }
    }
    let model = Classifier::new((3, 32, 32), 4, 1).unwrap();
    for seed in 0..10 {
        let p = model.predict_proba(&random_image(3, 32, 32, seed)).unwrap();
        drift = drift.max((p.iter().map(|&x| f64::from(x)).sum::<f64>() - 1.0).abs());
    }
    ensure(drift <= 1e-6, format!("softmax sum off by {drift:e}"))?;

    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("quick{i}.json"));
        let status = Command::new(bin)
            .args(["repro", "--quick", "-o", out.to_str().unwrap()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .unwrap();
        ensure(status.success(), "quick repro failed")?;
        reports.push(std::fs::read(&out).unwrap());
    }
    ensure(reports[0] == reports[1], "repro reports differ")?;
    Ok(format!(
        "grad check max rel error {worst:.2e} over 10 weight draws; softmax drift {drift:.1e}; repro byte-identical ({} bytes)",
        reports[0].len()
    ))
}

/// Runs `repro` at full data scale and notes when each protected model's row
/// is reported, for the per-combination runtime.
fn full_scale_report(bin: &Path) -> (ReproReport, Vec<(String, Duration)>) {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        block_sizes: vec![4],
        trend_block_sizes: vec![2, 8],
        ..ExperimentConfig::default()
    };
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = dir.path().join("report.json");
    let mut child = Command::new(bin)
        .args(["repro", "--config", config_path.to_str().unwrap(), "-o", out.to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut last = Instant::now();
    let mut per_combo = Vec::new();
    for line in BufReader::new(child.stderr.take().unwrap()).lines() {
        let line = line.unwrap();
        eprintln!("  | {line}");
        let now = Instant::now();
        if line.contains(" M=") && line.contains("correct") {
            per_combo.push((line.split(':').next().unwrap().to_string(), now - last));
        }
        last = now;
    }
    assert!(child.wait().unwrap().success(), "repro failed");
    let report = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    (report, per_combo)
}

fn main() {
    let bin = Path::new(env!("CARGO_BIN_EXE_blockkey"));
    let mut results: Vec<(&str, Check)> = vec![
        ("1 transform correctness", transform_suite()),
        ("2 key accounting", key_accounting()),
    ];
    let started = Instant::now();
    let (report, per_combo) = full_scale_report(bin);
    eprintln!("  | full-scale run: {:.0}s", started.elapsed().as_secs_f64());
    results.push(("3 protection gap", protection_gap(&report, &per_combo)));
    results.push(("4 block-size trend", block_size_trend(&report)));
    results.push(("5 key estimation", key_estimation(&report)));
    results.push(("6 fine-tuning attacks", finetuning_attacks(&report)));
    results.push(("7 key sensitivity", key_sensitivity(&report)));
    results.push(("8 numerical soundness", numerical_soundness(bin)));

    let mut failed = 0;
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("PASS [{name}] {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{name}] {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
