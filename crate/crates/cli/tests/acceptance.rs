//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). The training criteria drive
//! the command-line tool end to end in a scratch directory, so every job
//! leaves a manifest behind; the determinism criterion reruns those jobs
//! and compares outputs byte for byte. Set `ACCEPTANCE_ONLY` to a
//! comma-separated list of criterion names to run a subset, and
//! `ACCEPTANCE_DIR` to keep the job outputs in that directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bertsum::abstractive::{dual_lr, AbstractiveConfig, DualSchedule};
use bertsum::checkpoint::Checkpoint;
use bertsum::corpus::{load_jsonl, save_jsonl, synth_corpus, Document, KeyPosition, Strictness, SynthSpec};
use bertsum::encoder::EncoderConfig;
use bertsum::extractive::{extractive_lr, greedy_oracle, ExtractiveConfig};
use bertsum::metrics::{lcs_len, limited_length_recall, rouge_l, rouge_n, RougeKind};
use bertsum::numerics::gradcheck::{check_inputs, check_inputs_on, check_params};
use bertsum::numerics::Var;
use bertsum::rng::SeedStreams;
use bertsum::tokenizer::{
    build_vocab, decode_ids, encode_document, EncodedDocument, VocabOptions, BOS_ID, CLS_ID, EOS_ID, SEP_ID,
};
use bertsum::{AbstractiveModel, ExtractiveModel, ParamStore, PretrainModel, Tape, Tensor};
use rand::Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let only: Option<HashSet<String>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let scratch = tempfile::TempDir::new().expect("scratch directory");
    let dir = match std::env::var_os("ACCEPTANCE_DIR") {
        Some(d) => {
            fs::create_dir_all(&d).expect("ACCEPTANCE_DIR");
            fs::canonicalize(d).expect("ACCEPTANCE_DIR")
        }
        None => scratch.path().to_path_buf(),
    };
    let mut ctx = Context { dir, jobs: Vec::new() };
    let criteria: [(&str, fn(&mut Context) -> Outcome); 11] = [
        ("gradients", gradients),
        ("schedules", schedules),
        ("rouge", rouge_golden),
        ("oracle", oracle_equivalence),
        ("input-invariants", input_invariants),
        ("extractive-overfit", extractive_overfit),
        ("abstractive-memorization", abstractive_memorization),
        ("two-speed", two_speed),
        ("trigram-blocking", trigram_blocking),
        ("positions", positions),
        ("determinism", determinism),
    ];
    let mut lines = Vec::new();
    for (name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(name)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check(&mut ctx);
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(detail) => format!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => format!("FAIL  {name}: {why} [{secs:.1}s]"),
        };
        println!("{line}");
        lines.push((outcome.is_ok(), line));
    }
    println!("\nacceptance summary");
    for (_, line) in &lines {
        println!("{line}");
    }
    let failed = lines.iter().filter(|(ok, _)| !ok).count();
    println!("{} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

/// A command-line job whose outputs the determinism criterion replays.
struct Job {
    /// Arguments; `{OUT}` stands for the output path.
    args: Vec<String>,
    /// Output file, or the output directory of a training job.
    output: PathBuf,
    training: bool,
}

struct Context {
    dir: PathBuf,
    jobs: Vec<Job>,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn corpus(&self, name: &str, spec: &SynthSpec, seed: u64) -> Result<(PathBuf, Vec<Document>), String> {
        let docs = synth_corpus(spec, &mut SeedStreams::new(seed).stream("synth")).map_err(|e| e.to_string())?;
        let path = self.path(name);
        save_jsonl(&path, &docs).map_err(|e| e.to_string())?;
        Ok((path, docs))
    }

    /// Runs a command that writes `output`, recording it for replay.
    fn job(&mut self, args: &[&str], output: &Path) -> Result<(), String> {
        let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
        cli(&with_output(&args, output))?;
        self.jobs.push(Job {
            args,
            output: output.to_path_buf(),
            training: false,
        });
        Ok(())
    }

    /// Runs a training command with `config` written to `<out_dir>.cfg`.
    fn train(&mut self, command: &str, out: &str, config: &str, extra: &[&str]) -> Result<PathBuf, String> {
        let cfg = self.path(&format!("{out}.cfg"));
        let out_dir = self.path(out);
        fs::write(&cfg, format!("{config}out_dir = {}\n", out_dir.display())).map_err(|e| e.to_string())?;
        let mut args = vec![command, "--config", p(&cfg)];
        args.extend_from_slice(extra);
        cli(&args.iter().map(|a| a.to_string()).collect::<Vec<_>>())?;
        self.jobs.push(Job {
            args: vec![command.to_string(), "--config".into(), p(&out_dir.join("manifest.txt")).to_string()],
            output: out_dir.clone(),
            training: true,
        });
        Ok(out_dir)
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn with_output(args: &[String], output: &Path) -> Vec<String> {
    args.iter().map(|a| if a == "{OUT}" { p(output).to_string() } else { a.clone() }).collect()
}

fn cli(args: &[String]) -> Result<(), String> {
    let code = bertsum_cli::run(std::iter::once("bertsum".to_string()).chain(args.iter().cloned()));
    ensure!(code == 0, "`bertsum {}` exited with {code}", args.join(" "));
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_jsonl(path: &Path) -> Result<Vec<Value>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines().map(|l| serde_json::from_str(l).map_err(|e| e.to_string())).collect()
}

fn read_csv(path: &Path) -> Result<Vec<(usize, f64)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').ok_or_else(|| format!("bad csv row {l:?}"))?;
            Ok((a.parse().map_err(|_| format!("bad bucket {a:?}"))?, b.parse().map_err(|_| format!("bad value {b:?}"))?))
        })
        .collect()
}

/// Checkpoint entry from a training report with the lowest validation loss.
fn best_checkpoint(out_dir: &Path) -> Result<(PathBuf, Value), String> {
    let report = read_json(&out_dir.join("report.json"))?;
    let best = report["top"][0].clone();
    let file = best["file"].as_str().ok_or("report has no top checkpoint")?;
    Ok((out_dir.join(file), best))
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

// Gradients ------------------------------------------------------------------

const GRAD_SEEDS: u64 = 20;
const GRAD_TOL: f64 = 1e-4;

fn seeded(seed: u64) -> bertsum::rng::Rng {
    SeedStreams::new(seed).stream("gradcheck")
}

/// `sum(out ⊙ R)` for a fixed random `R`.
fn project(tape: &mut Tape<'_>, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let r = tape.constant(Tensor::randn(&shape, 1.0, &mut SeedStreams::new(seed).stream("projection")));
    let prod = tape.mul(out, r).unwrap();
    tape.sum(prod)
}

/// Adds N(0, 0.3²) noise to every weight so no check runs at a degenerate
/// initial point.
fn scramble(store: &mut ParamStore, seed: u64) {
    let mut g = SeedStreams::new(seed).stream("scramble");
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        let t = Tensor::randn(&shape, 0.3, &mut g).add(store.get(id)).unwrap();
        store.replace(id, t);
    }
}

fn small_encoder(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        width: 8,
        layers: 1,
        heads: 2,
        ffn_width: 16,
        max_pos: 16,
        dropout: 0.0,
    }
}

fn small_source() -> EncodedDocument {
    EncodedDocument {
        id: "g".into(),
        token_ids: vec![CLS_ID, 7, 8, SEP_ID, CLS_ID, 9, SEP_ID, CLS_ID, 7, SEP_ID],
        segment_ids: vec![0, 0, 0, 0, 1, 1, 1, 0, 0, 0],
        position_ids: (0..10).collect(),
        cls_positions: vec![0, 4, 7],
        n_sentences: 3,
        labels: Some(vec![0, 1, 0]),
    }
}

fn op_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut g = seeded(seed);
    let x = Tensor::randn(&[3, 4], 1.0, &mut g);
    let y = Tensor::randn(&[3, 4], 1.0, &mut g);
    let w = Tensor::randn(&[4, 2], 1.0, &mut g);
    let b = Tensor::randn(&[4], 1.0, &mut g);
    let gain = Tensor::randn(&[4], 1.0, &mut g);
    let z = Tensor::randn(&[5, 1], 1.0, &mut g);
    let logits = Tensor::randn(&[4, 6], 1.0, &mut g);
    let empty = ParamStore::new();
    vec![
        ("matmul", check_inputs(&[x.clone(), w.clone()], |t, v| {
            let o = t.matmul(v[0], v[1]).unwrap();
            project(t, o, seed)
        })),
        ("matmul_nt", check_inputs(&[x.clone(), y.clone()], |t, v| {
            let o = t.matmul_nt(v[0], v[1]).unwrap();
            project(t, o, seed)
        })),
        ("add", check_inputs(&[x.clone(), y.clone()], |t, v| {
            let o = t.add(v[0], v[1]).unwrap();
            project(t, o, seed)
        })),
        ("add_row", check_inputs(&[x.clone(), b.clone()], |t, v| {
            let o = t.add_row(v[0], v[1]).unwrap();
            project(t, o, seed)
        })),
        ("mul", check_inputs(&[x.clone(), y.clone()], |t, v| {
            let o = t.mul(v[0], v[1]).unwrap();
            project(t, o, seed)
        })),
        ("scale", check_inputs(&[x.clone()], |t, v| {
            let o = t.scale(v[0], -1.7);
            project(t, o, seed)
        })),
        ("gelu", check_inputs(&[x.clone()], |t, v| {
            let o = t.gelu(v[0]);
            project(t, o, seed)
        })),
        ("sigmoid", check_inputs(&[x.clone()], |t, v| {
            let o = t.sigmoid(v[0]);
            project(t, o, seed)
        })),
        ("softmax", check_inputs(&[x.clone()], |t, v| {
            let o = t.softmax(v[0]);
            project(t, o, seed)
        })),
        ("layer_norm", check_inputs(&[x.clone(), gain, b.clone()], |t, v| {
            let o = t.layer_norm(v[0], v[1], v[2], 1e-6).unwrap();
            project(t, o, seed)
        })),
        ("gather_rows", check_inputs(&[x.clone()], |t, v| {
            let o = t.gather_rows(v[0], &[2, 0, 2]).unwrap();
            project(t, o, seed)
        })),
        ("slice_cols+concat_cols", check_inputs(&[x.clone()], |t, v| {
            let a = t.slice_cols(v[0], 0, 1).unwrap();
            let c = t.slice_cols(v[0], 1, 3).unwrap();
            let o = t.concat_cols(&[c, a, c]).unwrap();
            project(t, o, seed)
        })),
        ("dropout", check_inputs_on(&[x.clone()], || Tape::training(&empty, seeded(seed + 1000)), |t, v| {
            let o = t.dropout(v[0], 0.3);
            project(t, o, seed)
        })),
        ("mean", check_inputs(&[x.clone()], |t, v| {
            let o = t.mul(v[0], v[0]).unwrap();
            t.mean(o)
        })),
        ("bce", check_inputs(&[z], |t, v| {
            let p = t.sigmoid(v[0]);
            t.bce(p, &[1.0, 0.0, 0.0, 1.0, 0.0], 1.5).unwrap()
        })),
        ("smoothed_nll", check_inputs(&[logits], |t, v| {
            t.smoothed_nll(v[0], &[Some(1), None, Some(5), Some(0)], 0.1).unwrap()
        })),
    ]
}

fn composition_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let streams = SeedStreams::new(seed);
    let mut ext = ExtractiveModel::new(
        ExtractiveConfig {
            encoder: small_encoder(10),
            inter_layers: 1,
            pos_weight: 1.0,
        },
        &mut streams.stream("init"),
    )
    .unwrap();
    scramble(&mut ext.store, seed);
    let ids: Vec<_> = ext.store.ids().collect();
    let doc = small_source();
    let e = check_params(&ext.store, &ids, |t| ext.loss(t, &doc).unwrap());

    let mut abs = AbstractiveModel::new(
        AbstractiveConfig {
            encoder: small_encoder(12),
            decoder_layers: 1,
            decoder_ffn_width: 16,
            decoder_dropout: 0.0,
            label_smoothing: 0.1,
            share_embeddings: false,
        },
        &mut streams.stream("init"),
        &mut streams.indexed("init", 1),
    )
    .unwrap();
    scramble(&mut abs.store, seed);
    let ids: Vec<_> = abs.store.ids().collect();
    let a = check_params(&abs.store, &ids, |t| abs.loss(t, &doc, &[BOS_ID, 9, 11, EOS_ID]).unwrap());

    let mut mlm = PretrainModel::new(small_encoder(12), &mut streams.stream("init")).unwrap();
    scramble(&mut mlm.store, seed);
    let ids: Vec<_> = mlm.store.ids().collect();
    let m = check_params(&mlm.store, &ids, |t| {
        mlm.masked_lm_loss(t, &[&doc], 0.5, &mut streams.stream("masking")).unwrap()
    });
    vec![("encoder→extractive loss", e), ("encoder→decoder→smoothed loss", a), ("masked-LM loss", m)]
}

fn gradients(_: &mut Context) -> Outcome {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..GRAD_SEEDS {
        for (name, err) in op_checks(seed).into_iter().chain(composition_checks(seed)) {
            ensure!(err < GRAD_TOL, "{name} seed {seed}: relative error {err:e}");
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1}s");
    let (name, err) = worst.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    Ok(format!(
        "{} checks × {GRAD_SEEDS} seeds under {GRAD_TOL:e}; worst {name} at {err:.1e}",
        worst.len()
    ))
}

// Schedules -----------------------------------------------------------------

fn schedules(_: &mut Context) -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let ext = |s| extractive_lr(s, 10_000, 2e-3).unwrap();
    ensure!(close(ext(1), 2e-3 * 1e-6), "extractive lr at 1");
    ensure!(close(ext(10_000), 2e-3 / 100.0), "extractive lr at warmup");
    ensure!(close(ext(20_000), 2e-3 / 20_000f64.sqrt()), "extractive lr at 2·warmup");

    let s = DualSchedule::default();
    ensure!((s.encoder_lr, s.encoder_warmup, s.decoder_lr, s.decoder_warmup) == (2e-3, 20_000, 0.1, 10_000), "defaults");
    let expect = |step: f64| {
        let enc = 2e-3 * step.powf(-0.5).min(step * 20_000f64.powf(-1.5));
        let dec = 0.1 * step.powf(-0.5).min(step * 10_000f64.powf(-1.5));
        (enc, dec)
    };
    for step in [1u64, 10_000, 20_000, 40_000] {
        let (e, d) = dual_lr(step, &s).unwrap();
        let (ee, ed) = expect(step as f64);
        ensure!(close(e, ee) && close(d, ed), "dual lr at {step}: {e} {d} vs {ee} {ed}");
    }
    for (warmup, base) in [(10_000u64, 2e-3), (s.encoder_warmup, s.encoder_lr), (s.decoder_warmup, s.decoder_lr)] {
        let lr: Vec<f64> = (1..=100_000).map(|t| extractive_lr(t, warmup, base).unwrap()).collect();
        let peak = warmup as usize - 1;
        ensure!(lr[..=peak].windows(2).all(|w| w[0] < w[1]), "not rising before {warmup}");
        ensure!(lr[peak..].windows(2).all(|w| w[0] > w[1]), "not falling after {warmup}");
    }
    Ok("closed forms to 1e-12 at 1, warmup, 2·warmup; rise-then-fall on 1..=100000".into())
}

// ROUGE ---------------------------------------------------------------------

fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    (0u32..1 << a.len())
        .map(|mask| (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect::<Vec<_>>())
        .filter(|s| is_subsequence(s, b))
        .map(|s| s.len())
        .max()
        .unwrap()
}

fn rouge_golden(_: &mut Context) -> Outcome {
    let w = |s: &'static str| s.split_whitespace().collect::<Vec<_>>();
    let (reference, candidate) = (w("the cat sat on the mat"), w("the cat on the mat"));
    let r1 = rouge_n(&candidate, &reference, 1);
    ensure!((r1.precision, r1.recall, r1.f1) == (1.0, 5.0 / 6.0, 10.0 / 11.0), "rouge-1 {r1:?}");
    let r2 = rouge_n(&candidate, &reference, 2);
    ensure!((r2.precision, r2.recall, r2.f1) == (0.75, 0.6, 6.0 / 9.0), "rouge-2 {r2:?}");
    let rl = rouge_l(&candidate, &reference);
    ensure!((rl.precision, rl.recall) == (1.0, 5.0 / 6.0), "rouge-l {rl:?}");
    let clip = rouge_n(&w("the the the"), &w("the cat"), 1);
    ensure!((clip.precision, clip.recall) == (1.0 / 3.0, 0.5), "clipping {clip:?}");
    let lr = limited_length_recall(&w("a b x y"), &w("a b"), RougeKind::N(1));
    ensure!(lr.recall == 1.0, "limited recall {lr:?}");
    let lr = limited_length_recall(&w("x y a b"), &w("a b"), RougeKind::N(1));
    ensure!(lr.recall == 0.0, "limited recall {lr:?}");

    let mut rng = SeedStreams::new(31).stream("lcs");
    let pairs = 1000;
    for _ in 0..pairs {
        let mut seq = || (0..rng.random_range(0..=8)).map(|_| rng.random_range(0..4u8)).collect::<Vec<_>>();
        let (a, b) = (seq(), seq());
        ensure!(lcs_len(&a, &b) == brute_lcs(&a, &b), "lcs of {a:?} and {b:?}");
    }
    Ok(format!("hand cases exact; LCS equals brute force on {pairs} random pairs"))
}

// Oracle --------------------------------------------------------------------

/// `2·overlap / (cand + ref)` as an exact fraction.
#[derive(Clone, Copy)]
struct Frac(u64, u64);

impl Frac {
    fn gt(self, o: Frac) -> bool {
        self.0 * o.1 > o.0 * self.1
    }
}

fn naive_f1(candidate: &[String], reference: &[String], n: usize) -> Frac {
    let grams = |w: &[String]| -> Vec<Vec<String>> { w.windows(n).map(<[String]>::to_vec).collect() };
    let cand = grams(candidate);
    let mut pool = grams(reference);
    let total = (cand.len() + pool.len()) as u64;
    let mut overlap = 0;
    for g in &cand {
        if let Some(i) = pool.iter().position(|r| r == g) {
            pool.swap_remove(i);
            overlap += 1;
        }
    }
    if overlap == 0 {
        Frac(0, 1)
    } else {
        Frac(2 * overlap, total)
    }
}

fn naive_greedy(src: &[Vec<String>], gold: &[String], n: usize, cap: usize) -> (Vec<bool>, Vec<f64>) {
    let mut selected = vec![false; src.len()];
    let mut current = Frac(0, 1);
    let mut trace = Vec::new();
    while trace.len() < cap {
        let mut best: Option<(usize, Frac)> = None;
        for i in (0..src.len()).filter(|&i| !selected[i]) {
            let mut trial = selected.clone();
            trial[i] = true;
            let cand: Vec<String> = (0..src.len())
                .filter(|&j| trial[j])
                .flat_map(|j| src[j].iter().map(|w| w.to_lowercase()))
                .collect();
            let f = naive_f1(&cand, gold, n);
            if f.gt(best.map_or(current, |(_, b)| b)) {
                best = Some((i, f));
            }
        }
        let Some((i, f)) = best else { break };
        selected[i] = true;
        current = f;
        trace.push(f.0 as f64 / f.1 as f64);
    }
    (selected, trace)
}

fn naive_oracle(src: &[Vec<String>], gold: &[Vec<String>], cap: usize) -> (Vec<u8>, Vec<f64>) {
    let gold: Vec<String> = gold.iter().flatten().map(|w| w.to_lowercase()).collect();
    let (mut sel, mut trace) = naive_greedy(src, &gold, 2, cap);
    if trace.is_empty() {
        (sel, trace) = naive_greedy(src, &gold, 1, cap);
        if trace.is_empty() {
            sel[0] = true;
        }
    }
    (sel.into_iter().map(u8::from).collect(), trace)
}

fn oracle_equivalence(_: &mut Context) -> Outcome {
    let streams = SeedStreams::new(41);
    let spec = SynthSpec {
        documents: 200,
        min_sentences: 1,
        max_sentences: 8,
        sentence_len: 4,
        vocab_size: 12,
        novel_words: 1,
        ..SynthSpec::default()
    };
    let docs = synth_corpus(&spec, &mut streams.stream("synth")).map_err(|e| e.to_string())?;
    let mut rng = streams.stream("gold");
    let mut multi = 0;
    for doc in &docs {
        let extra: Vec<String> = (0..rng.random_range(1..6)).map(|_| format!("w{}", rng.random_range(0..12))).collect();
        let gold = vec![doc.summary()[0].clone(), extra];
        let got = greedy_oracle(&doc.src, &gold, 3).map_err(|e| e.to_string())?;
        let (labels, trace) = naive_oracle(&doc.src, &gold, 3);
        ensure!(got.labels == labels, "{}: labels {:?} vs naive {:?}", doc.id, got.labels, labels);
        ensure!(got.trace == trace, "{}: trace {:?} vs naive {:?}", doc.id, got.trace, trace);
        ensure!(got.trace.windows(2).all(|w| w[0] <= w[1]), "{}: trace decreases {:?}", doc.id, got.trace);
        multi += usize::from(got.trace.len() > 1);
    }
    Ok(format!("{} documents identical to the naive oracle, {multi} with several greedy rounds", docs.len()))
}

// Input construction ------------------------------------------------------------

fn input_invariants(_: &mut Context) -> Outcome {
    let alphabet = ["a", "b", "c", "ab", "ba", "abc", "cab", "bb", "ca", "zz"];
    let seen: Vec<Vec<String>> = vec![alphabet[..9].iter().map(|w| w.to_string()).collect(), vec!["z".into()]];
    let vocab = build_vocab(seen.iter().map(Vec::as_slice), VocabOptions::default()).map_err(|e| e.to_string())?;
    let mut rng = SeedStreams::new(51).stream("docs");
    let n_docs = 2000;
    let mut truncated = 0;
    for d in 0..n_docs {
        let src: Vec<Vec<String>> = (0..rng.random_range(1..12))
            .map(|_| (0..rng.random_range(1..8)).map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string()).collect())
            .collect();
        let doc = Document::new(format!("d{d}"), src);
        let max_pos = rng.random_range(3..64);
        let enc = encode_document(&doc, &vocab, max_pos).map_err(|e| e.to_string())?;
        let id = &doc.id;
        ensure!(enc.len() <= max_pos, "{id}: length {} over {max_pos}", enc.len());
        ensure!(enc.segment_ids.len() == enc.len() && enc.position_ids == (0..enc.len()).collect::<Vec<_>>(), "{id}: ids");
        let cls: Vec<usize> = (0..enc.len()).filter(|&i| enc.token_ids[i] == CLS_ID).collect();
        let seps = enc.token_ids.iter().filter(|&&t| t == SEP_ID).count();
        ensure!(cls == enc.cls_positions && cls.len() == seps && cls.len() == enc.n_sentences, "{id}: markers");
        let mut bounds = cls.clone();
        bounds.push(enc.len());
        for k in 0..cls.len() {
            let (start, end) = (bounds[k], bounds[k + 1]);
            ensure!(end - start >= 3 && enc.token_ids[end - 1] == SEP_ID, "{id}: sentence {k} malformed");
            ensure!(enc.segment_ids[start..end].iter().all(|&s| s == k % 2), "{id}: sentence {k} segment");
        }
        ensure!(encode_document(&doc, &vocab, max_pos).map_err(|e| e.to_string())? == enc, "{id}: not deterministic");
        if enc.n_sentences < doc.src.len() {
            truncated += 1;
        } else {
            let full = encode_document(&doc, &vocab, 1000).map_err(|e| e.to_string())?;
            let text = decode_ids(&full.token_ids, &vocab).map_err(|e| e.to_string())?;
            ensure!(text == doc.src.iter().flatten().cloned().collect::<Vec<_>>().join(" "), "{id}: round trip");
        }
    }
    Ok(format!("{n_docs} random documents, {truncated} truncated, zero violations"))
}

// Extractive overfit ------------------------------------------------------------

/// Ten documents whose gold summary copies three of their sentences.
fn overfit_spec() -> SynthSpec {
    SynthSpec {
        documents: 10,
        min_sentences: 5,
        max_sentences: 8,
        sentence_len: 6,
        vocab_size: 200,
        key_sentences: 3,
        id_prefix: "ov".into(),
        ..SynthSpec::default()
    }
}

fn extractive_overfit(ctx: &mut Context) -> Outcome {
    let (corpus, _) = ctx.corpus("overfit.jsonl", &overfit_spec(), 61)?;
    let start = Instant::now();
    // Desk model (width 128, 2 encoder layers, 2 inter-sentence layers), one
    // document per optimizer step, validated on the training documents.
    let config = format!(
        "seed = 61\ntrain = {c}\nvalid = {c}\nauto_oracle = true\nsteps = 2000\neval_every = 250\n\
         accum = 1\nbatch_tokens = 64\nlr = 2e-3\nwarmup = 100\n",
        c = corpus.display()
    );
    let out = ctx.train("train-ext", "overfit", &config, &[])?;
    let secs = start.elapsed().as_secs_f64();
    let (ckpt, best) = best_checkpoint(&out)?;
    let bce = best["val_loss"].as_f64().ok_or("no validation loss")?;
    let step = best["step"].as_u64().unwrap_or(0);

    let labeled = ctx.path("overfit-oracle.jsonl");
    ctx.job(&["oracle", "--input", p(&corpus), "--output", "{OUT}"], &labeled)?;
    let selected = ctx.path("overfit-select.jsonl");
    ctx.job(
        &["select", "--checkpoint", p(&ckpt), "--input", p(&corpus), "--output", "{OUT}", "--k", "3", "--no-block-trigrams"],
        &selected,
    )?;
    let docs = load_jsonl(&labeled, Strictness::Strict).map_err(|e| e.to_string())?.documents;
    let picks = read_jsonl(&selected)?;
    let matched = docs
        .iter()
        .zip(&picks)
        .filter(|(d, s)| {
            let oracle: Vec<u64> = (0..d.src.len()).filter(|&i| d.labels.as_ref().unwrap()[i] == 1).map(|i| i as u64).collect();
            let chosen: Vec<u64> = s["indices"].as_array().unwrap().iter().filter_map(Value::as_u64).collect();
            oracle == chosen
        })
        .count();
    let detail = format!("mean BCE {bce:.4} at step {step}, top-3 = oracle on {matched}/10, training {secs:.0}s");
    ensure!(bce < 0.05, "{detail}");
    ensure!(matched >= 9, "{detail}");
    ensure!(secs < 600.0, "{detail}");
    Ok(detail)
}

// Abstractive memorization ------------------------------------------------------

fn abstractive_memorization(ctx: &mut Context) -> Outcome {
    let spec = SynthSpec {
        documents: 10,
        min_sentences: 4,
        max_sentences: 6,
        sentence_len: 6,
        vocab_size: 200,
        novel_words: 2,
        id_prefix: "mem".into(),
        ..SynthSpec::default()
    };
    let (corpus, docs) = ctx.corpus("memorize.jsonl", &spec, 71)?;
    // Warmups are compressed to the step budget; the decoder rate is scaled
    // down so its peak stays near 1e-3.
    let start = Instant::now();
    let config = format!(
        "seed = 71\ntrain = {c}\nvalid = {c}\nsteps = 1500\neval_every = 500\naccum = 1\nbatch_tokens = 64\n\
         enc_warmup = 1000\ndec_lr = 0.03\ndec_warmup = 500\n",
        c = corpus.display()
    );
    let out = ctx.train("train-abs", "memorize", &config, &[])?;
    let secs = start.elapsed().as_secs_f64();
    let report = read_json(&out.join("report.json"))?;
    let last = report["checkpoints"].as_array().and_then(|c| c.last()).ok_or("no checkpoints")?.clone();
    let steps = last["step"].as_u64().unwrap_or(0);
    let ckpt = out.join(last["file"].as_str().unwrap_or_default());

    let decoded = ctx.path("memorize-decode.jsonl");
    ctx.job(
        &["decode", "--checkpoint", p(&ckpt), "--input", p(&corpus), "--output", "{OUT}", "--beam", "1", "--max-len", "16"],
        &decoded,
    )?;
    let hyps = read_jsonl(&decoded)?;
    let exact = docs
        .iter()
        .zip(&hyps)
        .filter(|(d, h)| words(h["summary"].as_str().unwrap_or_default()) == words(&d.summary().concat().join(" ")))
        .count();
    let detail = format!("beam-1 exact on {exact}/10 after {steps} steps, training {secs:.0}s");
    ensure!(exact >= 8 && steps <= 5000 && secs < 1200.0, "{detail}");
    Ok(detail)
}

// Two-speed schedule ------------------------------------------------------------

/// Model shared by the pretraining and fine-tuning runs of the two-speed
/// comparison.
const TWO_SPEED_MODEL: &str = "width = 64\nlayers = 2\nheads = 4\nffn_width = 256\nmax_pos = 128\nbatch_tokens = 128\n";

fn two_speed(ctx: &mut Context) -> Outcome {
    let task = |documents, prefix: &str| SynthSpec {
        documents,
        min_sentences: 4,
        max_sentences: 6,
        sentence_len: 6,
        vocab_size: 60,
        novel_words: 1,
        key_position: KeyPosition::Fixed(0),
        id_prefix: prefix.into(),
        ..SynthSpec::default()
    };
    // The gold summary copies the first sentence with one word replaced, so
    // a well-tuned model learns to copy from the source.
    let (train, _) = ctx.corpus("two-speed-train.jsonl", &task(60, "ts"), 81)?;
    let (valid, _) = ctx.corpus("two-speed-valid.jsonl", &task(20, "tv"), 82)?;
    let common = format!("train = {}\nvalid = {}\n{TWO_SPEED_MODEL}", train.display(), valid.display());
    let pretrain = ctx.train(
        "pretrain",
        "two-speed-mlm",
        &format!("seed = 80\n{common}steps = 400\neval_every = 400\nlr = 1e-3\nwarmup = 100\n"),
        &[],
    )?;
    let encoder = best_checkpoint(&pretrain)?.0;

    // Both settings share the warmups and the 300-step budget and differ
    // only in their base rates.
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 1..=5u64 {
        let mut ppl = Vec::new();
        for (tag, enc_lr, dec_lr) in [("slow", "2e-3", "0.1"), ("fast", "2e-2", "1")] {
            let config = format!(
                "seed = {seed}\n{common}init_from = {}\nsteps = 300\neval_every = 300\naccum = 1\n\
                 enc_lr = {enc_lr}\ndec_lr = {dec_lr}\nenc_warmup = 2000\ndec_warmup = 1000\n",
                encoder.display()
            );
            let out = ctx.train("train-abs", &format!("two-speed-{tag}-{seed}"), &config, &[])?;
            let report = read_json(&out.join("report.json"))?;
            let last = report["checkpoints"].as_array().and_then(|c| c.last()).ok_or("no checkpoints")?.clone();
            ppl.push(last["val_perplexity"].as_f64().ok_or("no perplexity")?);
        }
        wins += usize::from(ppl[0] < ppl[1]);
        pairs.push(format!("{:.2}<{:.2}", ppl[0], ppl[1]));
    }
    let detail = format!("(2e-3, 0.1) below (2e-2, 1) on {wins}/5 seeds: {}", pairs.join(" "));
    ensure!(wins >= 4, "{detail}");
    Ok(detail)
}

// Trigram blocking --------------------------------------------------------------

fn sentence_trigrams(sentence: &[String]) -> HashSet<Vec<String>> {
    let words: Vec<String> = sentence.iter().map(|w| w.to_lowercase()).collect();
    words.windows(3).map(<[String]>::to_vec).collect()
}

/// Number of selections in which two chosen sentences share a trigram.
fn shared_trigram_selections(docs: &[Document], selections: &[Value]) -> usize {
    docs.iter()
        .zip(selections)
        .filter(|(d, s)| {
            let chosen: Vec<usize> = s["indices"].as_array().unwrap().iter().map(|i| i.as_u64().unwrap() as usize).collect();
            let mut seen = HashSet::new();
            chosen.iter().any(|&i| sentence_trigrams(&d.src[i]).into_iter().any(|t| !seen.insert(t)))
        })
        .count()
}

fn repeats_trigram(text: &str) -> bool {
    let mut seen = HashSet::new();
    words(text).windows(3).any(|t| !seen.insert(t.to_vec()))
}

fn trigram_blocking(ctx: &mut Context) -> Outcome {
    // Extractive: the overfit model scoring 1000 documents over a tiny
    // vocabulary, where sentences share trigrams all the time.
    let overfit = ctx.path("overfit");
    if !overfit.join("report.json").exists() {
        extractive_overfit(ctx).map_err(|e| format!("extractive model: {e}"))?;
    }
    let ckpt = best_checkpoint(&overfit)?.0;
    let spec = SynthSpec {
        documents: 1000,
        min_sentences: 5,
        max_sentences: 10,
        sentence_len: 5,
        vocab_size: 6,
        id_prefix: "tb".into(),
        ..SynthSpec::default()
    };
    let (corpus, docs) = ctx.corpus("blocking.jsonl", &spec, 91)?;
    let blocked = ctx.path("blocking-select.jsonl");
    ctx.job(&["select", "--checkpoint", p(&ckpt), "--input", p(&corpus), "--output", "{OUT}"], &blocked)?;
    let unblocked = ctx.path("blocking-unblocked.jsonl");
    ctx.job(
        &["select", "--checkpoint", p(&ckpt), "--input", p(&corpus), "--output", "{OUT}", "--no-block-trigrams"],
        &unblocked,
    )?;
    let violations = shared_trigram_selections(&docs, &read_jsonl(&blocked)?);
    let baseline = shared_trigram_selections(&docs, &read_jsonl(&unblocked)?);
    ensure!(violations == 0, "{violations} blocked selections share a trigram");
    ensure!(baseline > 0, "unblocked selections never share a trigram, so the check is vacuous");

    // Abstractive: every decode written during this run, plus a beam-5 decode
    // of the two-speed validation set.
    let mut decoded = 0;
    let mut repeated = 0;
    let two_speed = ctx.path("two-speed-slow-1");
    if two_speed.join("report.json").exists() {
        let ckpt = best_checkpoint(&two_speed)?.0;
        let valid = ctx.path("two-speed-valid.jsonl");
        let out = ctx.path("blocking-decode.jsonl");
        ctx.job(&["decode", "--checkpoint", p(&ckpt), "--input", p(&valid), "--output", "{OUT}"], &out)?;
    }
    let outputs: Vec<PathBuf> = ctx
        .jobs
        .iter()
        .filter(|j| j.args.first().is_some_and(|c| c == "decode"))
        .map(|j| j.output.clone())
        .collect();
    for path in outputs {
        for rec in read_jsonl(&path)? {
            decoded += 1;
            repeated += usize::from(repeats_trigram(rec["summary"].as_str().unwrap_or_default()));
        }
    }
    ensure!(repeated == 0, "{repeated} of {decoded} abstractive summaries repeat a trigram");
    Ok(format!(
        "0/1000 blocked selections share a trigram ({baseline} would without blocking); {decoded} abstractive decodes repeat none"
    ))
}

// Position analysis -------------------------------------------------------------

fn positions(ctx: &mut Context) -> Outcome {
    let spec = SynthSpec {
        documents: 500,
        min_sentences: 10,
        max_sentences: 10,
        key_position: KeyPosition::Uniform,
        id_prefix: "pos".into(),
        ..SynthSpec::default()
    };
    let (corpus, _) = ctx.corpus("positions.jsonl", &spec, 101)?;
    let labeled = ctx.path("positions-oracle.jsonl");
    ctx.job(&["oracle", "--input", p(&corpus), "--output", "{OUT}"], &labeled)?;
    let lead = ctx.path("positions-lead.jsonl");
    ctx.job(&["select", "--lead", "3", "--input", p(&corpus), "--output", "{OUT}"], &lead)?;
    let lead_csv = ctx.path("positions-lead.csv");
    ctx.job(&["analyze", "positions", "--corpus", p(&corpus), "--selections", p(&lead), "--output", "{OUT}"], &lead_csv)?;
    let oracle_csv = ctx.path("positions-oracle.csv");
    ctx.job(&["analyze", "positions", "--corpus", p(&labeled), "--output", "{OUT}"], &oracle_csv)?;

    let mass = |rows: &[(usize, f64)], keep: &dyn Fn(usize) -> bool| -> f64 {
        rows.iter().filter(|(b, _)| keep(*b)).map(|(_, v)| v).sum()
    };
    let lead_rows = read_csv(&lead_csv)?;
    let oracle_rows = read_csv(&oracle_csv)?;
    let lead_head = mass(&lead_rows, &|b| b < 3);
    let oracle_tail = mass(&oracle_rows, &|b| b >= 5);
    let detail = format!("Lead-3 mass in buckets 0-2 = {lead_head}; oracle mass in buckets ≥5 = {oracle_tail:.3}");
    ensure!(lead_head == 1.0 && oracle_tail >= 0.2, "{detail}");
    Ok(detail)
}

// Determinism -------------------------------------------------------------------

fn files_under(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

/// Reruns every recorded job: training jobs from their manifests into a
/// fresh directory, the rest with identical arguments into a fresh file.
fn determinism(ctx: &mut Context) -> Outcome {
    if ctx.jobs.is_empty() {
        positions(ctx).map_err(|e| format!("no jobs to replay: {e}"))?;
    }
    let jobs = std::mem::take(&mut ctx.jobs);
    let mut compared = 0;
    for (n, job) in jobs.iter().enumerate() {
        if job.training {
            let again = ctx.path(&format!("replay-{n}"));
            let mut args = job.args.clone();
            args.extend(["--set".into(), format!("out_dir={}", again.display())]);
            cli(&args)?;
            let original = files_under(&job.output)?;
            for file in &original {
                let name = file.file_name().unwrap();
                if name == "manifest.txt" {
                    continue;
                }
                let a = fs::read(file).map_err(|e| e.to_string())?;
                let b = fs::read(again.join(name)).map_err(|e| format!("{}: {e}", name.to_string_lossy()))?;
                ensure!(a == b, "{} differs after replaying {}", name.to_string_lossy(), job.output.display());
                compared += 1;
            }
        } else {
            let again = ctx.path(&format!("replay-{n}.out"));
            cli(&with_output(&job.args, &again))?;
            let a = fs::read(&job.output).map_err(|e| e.to_string())?;
            let b = fs::read(&again).map_err(|e| e.to_string())?;
            ensure!(a == b, "{} differs on replay", job.output.display());
            compared += 1;
        }
    }
    // Checkpoints also survive a load/save cycle unchanged.
    for job in jobs.iter().filter(|j| j.training) {
        for file in files_under(&job.output)?.iter().filter(|f| f.extension().is_some_and(|e| e == "ckpt")) {
            let bytes = fs::read(file).map_err(|e| e.to_string())?;
            let again = Checkpoint::from_bytes(&bytes).and_then(|c| c.to_bytes()).map_err(|e| e.to_string())?;
            ensure!(again == bytes, "{} changes on load and save", file.display());
        }
    }
    let training = jobs.iter().filter(|j| j.training).count();
    ctx.jobs = jobs;
    Ok(format!(
        "{} jobs replayed ({training} training runs from their manifests), {compared} output files bitwise identical",
        ctx.jobs.len()
    ))
}
