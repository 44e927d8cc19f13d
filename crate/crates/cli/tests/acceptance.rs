//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use std::collections::HashMap;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::time::Instant;

use common::toy_records;
use peftlab::accounting::paper_scale;
use peftlab::{
    evaluate, format_params_m, format_ratio_pct, train, DataBlock, EvalOptions, LoraBlock, Method,
    Preset, PrefixBlock, RougeHeadline, RunConfig, SplitSide, TrainBlock,
};
use peftlab_adapters::{
    freeze_base, grad_check_paths, load_checkpoint, save_model, AdapterError, AdapterStack,
    LoraAdapter, LoraConfig, PrefixAdapter, PrefixConfig, Stage, TrainParams,
};
use peftlab_autograd::{Graph, Tensor};
use peftlab_data::{build_prompt, parse_qa, split_dataset_by_count, write_records, MockBackend};
use peftlab_eval::{bleu4, corpus_eval, rouge_l, rouge_n, tokenize, TokenMode, TokenSeq};
use peftlab_model::{ForwardOptions, ModelConfig, PastKeyValues, TransformerModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn criterion<F: FnOnce()>(number: u32, name: &str, body: F) {
    match std::panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("ACCEPTANCE {number:02} {name}: PASS"),
        Err(payload) => {
            println!("ACCEPTANCE {number:02} {name}: FAIL");
            std::panic::resume_unwind(payload);
        }
    }
}

fn micro_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 260,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 64,
        seed,
    }
}

fn eval_logits(
    model: &TransformerModel,
    stack: Option<&AdapterStack>,
    tokens: &[u32],
    mask_prefix: bool,
) -> Vec<f64> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let past = stack.and_then(|s| s.past_data().unwrap());
    let bound_past = past.as_ref().map(|p| p.bind(&mut g));
    let mut hook = stack
        .and_then(|s| s.lora.as_ref())
        .map(|l| l.eval_hook());
    let hook_dyn: Option<&mut dyn peftlab_model::LinearHook> =
        hook.as_mut().map(|h| h as &mut dyn peftlab_model::LinearHook);
    let opts = ForwardOptions { mode: peftlab_model::Mode::Eval, mask_prefix };
    let logits = bound
        .forward(&mut g, tokens, bound_past.as_ref(), &opts, hook_dyn)
        .unwrap();
    g.value(logits).to_vec()
}

// ── criterion 1 ──────────────────────────────────────────────────────

#[test]
fn acceptance_01_gradient_correctness() {
    criterion(1, "gradient correctness over every trainable path", || {
        let started = Instant::now();
        let report = grad_check_paths(4);
        let elapsed = started.elapsed();

        let kinds = ["tok_emb", "layer.0.attn.wq", "layer.1.ff.w2", "final_ln.gain"];
        for kind in kinds {
            assert!(report.iter().any(|(n, _)| n == kind), "missing path {kind}");
        }
        assert!(report.iter().any(|(n, _)| n == "prefix.table"));
        assert!(report.iter().any(|(n, _)| n.starts_with("prefix.mlp.")));
        assert!(report.iter().any(|(n, _)| n.ends_with(".a")));
        assert!(report.iter().any(|(n, _)| n.ends_with(".b")));
        for (name, err) in &report {
            assert!(err < &1e-4, "{name}: relative error {err}");
        }
        assert!(elapsed.as_secs() < 60, "gradient checks took {elapsed:?}");
    });
}

// ── criterion 2 ──────────────────────────────────────────────────────

#[test]
fn acceptance_02_lora_zero_init_neutrality() {
    criterion(2, "freshly attached LoRA changes no eval logits", || {
        let model = TransformerModel::new(micro_model_config(21)).unwrap();
        let lora = LoraAdapter::new(
            LoraConfig {
                r: 8,
                alpha: 32.0,
                dropout: 0.05,
                targets: LoraConfig::default_targets(),
                seed: 9,
            },
            &model,
        )
        .unwrap();
        let stack = AdapterStack { lora: Some(lora), ..Default::default() };
        for tokens in [vec![1u32, 2, 3], vec![250, 257, 259, 99, 0]] {
            let plain = eval_logits(&model, None, &tokens, false);
            let adapted = eval_logits(&model, Some(&stack), &tokens, false);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&plain), bits(&adapted), "zero-init LoRA moved the logits");
        }
    });
}

// ── criterion 3 ──────────────────────────────────────────────────────

#[test]
fn acceptance_03_merge_equivalence() {
    criterion(3, "merged weights equal the adapter path", || {
        let model = TransformerModel::new(micro_model_config(22)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lora = LoraAdapter::new(
            LoraConfig {
                r: 4,
                alpha: 32.0,
                dropout: 0.0,
                targets: LoraConfig::default_targets(),
                seed: 10,
            },
            &model,
        )
        .unwrap();
        for (_, t) in lora.named_tensors_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let stack = AdapterStack { lora: Some(lora.clone()), ..Default::default() };
        let mut merged = model.clone();
        lora.merge(&mut merged).unwrap();

        let mut worst = 0.0f64;
        for _ in 0..32 {
            let len = rng.gen_range(1..10);
            let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..260)).collect();
            let adapter_path = eval_logits(&model, Some(&stack), &tokens, false);
            let merged_path = eval_logits(&merged, None, &tokens, false);
            for (a, b) in adapter_path.iter().zip(&merged_path) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-9, "max abs logit diff {worst}");

        // evaluate() under both paths: identical scores.
        let dir = TempDir::new().unwrap();
        let mut config = common::toy_config(dir.path(), Method::Lora);
        config.train.epochs = 4;
        train(&config).unwrap();
        let merged_eval = evaluate(
            &config,
            &EvalOptions { zero_runtime: true, ..Default::default() },
        )
        .unwrap();
        let adapter_eval = evaluate(
            &config,
            &EvalOptions { merge_lora: false, zero_runtime: true, ..Default::default() },
        )
        .unwrap();
        assert_eq!(merged_eval.bleu4, adapter_eval.bleu4);
        assert_eq!(merged_eval.rouge1, adapter_eval.rouge1);
        assert_eq!(merged_eval.rouge2, adapter_eval.rouge2);
        assert_eq!(merged_eval.rouge_l, adapter_eval.rouge_l);
    });
}

// ── criterion 4 ──────────────────────────────────────────────────────

#[test]
fn acceptance_04_prefix_inertness() {
    criterion(4, "masked prefix reproduces base logits", || {
        let cfg = micro_model_config(23);
        let model = TransformerModel::new(cfg.clone()).unwrap();
        // Once through a real adapter...
        let adapter = PrefixAdapter::new(
            PrefixConfig { pre_seq_len: 6, d_prefix: 16, mlp_hidden: 32, seed: 3 },
            &cfg,
        )
        .unwrap();
        let stack = AdapterStack { prefix: Some(adapter), ..Default::default() };
        // ...and once with raw random KV blocks.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw_layers = (0..cfg.n_layers)
            .map(|_| {
                let k = Tensor::randn(&[5, cfg.d_model], 0.7, &mut rng);
                let v = Tensor::randn(&[5, cfg.d_model], 0.7, &mut rng);
                (k.data().to_vec(), v.data().to_vec())
            })
            .collect();
        let raw_past = PastKeyValues::new(5, cfg.d_model, raw_layers).unwrap();

        let tokens = [9u32, 80, 170, 258, 12];
        let base = eval_logits(&model, None, &tokens, false);

        let masked_adapter = eval_logits(&model, Some(&stack), &tokens, true);
        let mut worst = 0.0f64;
        for (a, b) in base.iter().zip(&masked_adapter) {
            worst = worst.max((a - b).abs());
        }

        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let bound_past = raw_past.bind(&mut g);
        let opts = ForwardOptions { mode: peftlab_model::Mode::Eval, mask_prefix: true };
        let logits = bound
            .forward(&mut g, &tokens, Some(&bound_past), &opts, None)
            .unwrap();
        for (a, b) in base.iter().zip(g.value(logits)) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-9, "masked prefix shifted logits by {worst}");

        // And the unmasked prefix does influence the outputs.
        let active = eval_logits(&model, Some(&stack), &tokens, false);
        assert!(base.iter().zip(&active).any(|(a, b)| a != b));
    });
}

// ── criterion 5 ──────────────────────────────────────────────────────

#[test]
fn acceptance_05_stage_freezing() {
    criterion(5, "frozen tensors survive every training stage bit-for-bit", || {
        let cfg = micro_model_config(24);
        let mut model = TransformerModel::new(cfg.clone()).unwrap();
        freeze_base(&mut model);
        let data: Vec<_> = {
            let records = toy_records(8);
            let tok = peftlab_model::Tokenizer;
            let encoded: Vec<_> = records
                .iter()
                .map(|r| peftlab::encode_record(r, &tok, 40, 40))
                .collect();
            peftlab::collate(&encoded).examples()
        };
        let params = TrainParams {
            learning_rate: 1e-2,
            batch_size: 4,
            epochs: 2,
            seed: 77,
            early_stop_loss: None,
        };

        let snapshot_model = |m: &TransformerModel| -> Vec<Vec<u64>> {
            m.named_tensors()
                .iter()
                .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
                .collect()
        };

        // Stage 1: prefix trains, base frozen.
        let base_before = snapshot_model(&model);
        let mut stack = AdapterStack {
            prefix: Some(
                PrefixAdapter::new(
                    PrefixConfig { pre_seq_len: 4, d_prefix: 16, mlp_hidden: 16, seed: 5 },
                    &cfg,
                )
                .unwrap(),
            ),
            ..Default::default()
        };
        peftlab_adapters::train_stage(&model, &mut stack, Stage::Prefix, &data, &params).unwrap();
        assert_eq!(base_before, snapshot_model(&model), "stage 1 moved base weights");

        // Bake + freeze the prefix, then stage 2: lora trains.
        let prefix = stack.prefix.as_mut().unwrap();
        prefix.bake().unwrap();
        prefix.set_frozen(true);
        let prefix_before: Vec<Vec<u64>> = prefix
            .named_tensors()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();

        stack.lora = Some(
            LoraAdapter::new(
                LoraConfig {
                    r: 2,
                    alpha: 8.0,
                    dropout: 0.0,
                    targets: LoraConfig::default_targets(),
                    seed: 6,
                },
                &model,
            )
            .unwrap(),
        );
        peftlab_adapters::train_stage(&model, &mut stack, Stage::Lora, &data, &params).unwrap();

        assert_eq!(base_before, snapshot_model(&model), "stage 2 moved base weights");
        let prefix_after: Vec<Vec<u64>> = stack
            .prefix
            .as_ref()
            .unwrap()
            .named_tensors()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(prefix_before, prefix_after, "stage 2 moved the frozen prefix");
    });
}

// ── criterion 6 ──────────────────────────────────────────────────────

#[test]
fn acceptance_06_parameter_accounting() {
    criterion(6, "joint accounting adds up and renders the published values", || {
        // Toy-scale: joint trainable equals prefix + lora exactly.
        let cfg = micro_model_config(25);
        let model = TransformerModel::new(cfg.clone()).unwrap();
        let prefix = PrefixAdapter::new(
            PrefixConfig { pre_seq_len: 4, d_prefix: 16, mlp_hidden: 32, seed: 1 },
            &cfg,
        )
        .unwrap();
        let lora = LoraAdapter::new(
            LoraConfig {
                r: 4,
                alpha: 16.0,
                dropout: 0.0,
                targets: LoraConfig::default_targets(),
                seed: 2,
            },
            &model,
        )
        .unwrap();
        let (p, l) = (prefix.param_count(), lora.param_count());
        let stack = AdapterStack { prefix: Some(prefix), lora: Some(lora), stages: Vec::new() };
        assert_eq!(stack.trainable_param_count(), p + l);

        // Paper-scale dimensions through the same counting formulas.
        let dims = paper_scale();
        assert_eq!(format_params_m(dims.prefix_params()), "3.50M");
        assert_eq!(format_params_m(dims.lora_params()), "1.86M");
        assert_eq!(format_params_m(dims.joint_params()), "5.36M");
        assert_eq!(dims.joint_params(), dims.prefix_params() + dims.lora_params());
        let ratio = dims.joint_params() as f64 / (dims.base_params + dims.joint_params()) as f64;
        assert_eq!(format_ratio_pct(ratio), "0.0899%");
        assert_eq!(format_params_m(dims.base_params), "5954.35M");
        assert_eq!(format_params_m(dims.base_params + dims.joint_params()), "5959.71M");

        // Toy default config: the joint adapters stay under 1% of total.
        let dir = TempDir::new().unwrap();
        let mut toy = common::toy_config(dir.path(), Method::Joint);
        Preset::Toy.apply(&mut toy);
        let toy_model_params = peftlab_model::count_params(&toy.model);
        let pb = toy.prefix.as_ref().unwrap();
        let lb = toy.lora.as_ref().unwrap();
        let toy_prefix = peftlab_adapters::prefix_param_count(
            pb.pre_seq_len,
            pb.d_prefix,
            pb.mlp_hidden,
            toy.model.n_layers,
            toy.model.d_model,
        );
        let toy_lora = peftlab_adapters::lora_param_count(
            lb.r,
            &vec![(toy.model.d_model, toy.model.d_model); toy.model.n_layers * 2],
        );
        let toy_ratio = (toy_prefix + toy_lora) as f64 / toy_model_params as f64;
        assert!(
            toy_ratio < 0.01,
            "toy default trainable share {toy_ratio:.4} is not under 1%"
        );
    });
}

// ── criterion 7 ──────────────────────────────────────────────────────

mod metric_oracle {
    //! Brute-force metric implementations, written against the stated
    //! formulas without sharing code with the eval crate.

    pub fn clipped(cand: &[String], refr: &[String], n: usize) -> (u64, u64) {
        if cand.len() < n {
            return (0, 0);
        }
        let grams: Vec<&[String]> = cand.windows(n).collect();
        let mut seen: Vec<&[String]> = Vec::new();
        let mut matched = 0u64;
        for gram in &grams {
            if seen.contains(gram) {
                continue;
            }
            seen.push(gram);
            let c = grams.iter().filter(|g| *g == gram).count() as u64;
            let r = if refr.len() >= n {
                refr.windows(n).filter(|g| g == gram).count() as u64
            } else {
                0
            };
            matched += c.min(r);
        }
        (matched, grams.len() as u64)
    }

    pub fn bleu(cand: &[String], refr: &[String]) -> f64 {
        if cand.is_empty() {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 1..=4 {
            let (m, t) = clipped(cand, refr, n);
            let p = if t == 0 { 0.0 } else { m as f64 / t as f64 };
            log_sum += 0.25 * if p > 0.0 { p.ln() } else { (1e-9f64).ln() };
        }
        let (c, r) = (cand.len() as f64, refr.len() as f64);
        let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
        bp * log_sum.exp()
    }

    pub fn rouge_n(cand: &[String], refr: &[String], n: usize) -> (f64, f64, f64) {
        let mut overlap = 0u64;
        if refr.len() >= n {
            let mut seen: Vec<&[String]> = Vec::new();
            for gram in refr.windows(n) {
                if seen.contains(&gram) {
                    continue;
                }
                seen.push(gram);
                let r = refr.windows(n).filter(|g| *g == gram).count() as u64;
                let c = if cand.len() >= n {
                    cand.windows(n).filter(|g| *g == gram).count() as u64
                } else {
                    0
                };
                overlap += r.min(c);
            }
        }
        let ct = if cand.len() >= n { (cand.len() - n + 1) as u64 } else { 0 };
        let rt = if refr.len() >= n { (refr.len() - n + 1) as u64 } else { 0 };
        let p = if ct == 0 { 0.0 } else { overlap as f64 / ct as f64 };
        let r = if rt == 0 { 0.0 } else { overlap as f64 / rt as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }

    /// Quadratic-table LCS written independently of the eval crate's
    /// rolling-row version.
    pub fn lcs(a: &[String], b: &[String]) -> usize {
        let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                table[i][j] = if a[i - 1] == b[j - 1] {
                    table[i - 1][j - 1] + 1
                } else {
                    table[i - 1][j].max(table[i][j - 1])
                };
            }
        }
        table[a.len()][b.len()]
    }
}

#[test]
fn acceptance_07_metric_oracles() {
    criterion(7, "metrics match brute force on 1000 random pairs", || {
        let started = Instant::now();
        let vocab = ["plan", "site", "core", "zone", "mix", "park", "?", "land"];
        let mut rng = ChaCha8Rng::seed_from_u64(2718);
        let mut random_seq = |max_len: usize| -> TokenSeq {
            let len = rng.gen_range(0..=max_len);
            let tokens: Vec<&str> =
                (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
            tokenize(&tokens.join(" "), TokenMode::Word)
        };

        for i in 0..1000 {
            let c = random_seq(12);
            let r = random_seq(12);

            let got_bleu = bleu4(&c, &r);
            let want_bleu = metric_oracle::bleu(&c.tokens, &r.tokens);
            assert!(
                (got_bleu - want_bleu).abs() < 1e-12,
                "pair {i}: bleu {got_bleu} vs {want_bleu}"
            );

            for n in 1..=2usize {
                let got = rouge_n(&c, &r, n);
                let (p, rr, f1) = metric_oracle::rouge_n(&c.tokens, &r.tokens, n);
                assert!((got.precision - p).abs() < 1e-12, "pair {i} rouge{n} precision");
                assert!((got.recall - rr).abs() < 1e-12, "pair {i} rouge{n} recall");
                assert!((got.f1 - f1).abs() < 1e-12, "pair {i} rouge{n} f1");
            }

            let got = rouge_l(&c, &r);
            let lcs = metric_oracle::lcs(&c.tokens, &r.tokens) as f64;
            let p = if c.is_empty() { 0.0 } else { lcs / c.len() as f64 };
            let rr = if r.is_empty() { 0.0 } else { lcs / r.len() as f64 };
            let f1 = if p + rr == 0.0 { 0.0 } else { 2.0 * p * rr / (p + rr) };
            assert!((got.precision - p).abs() < 1e-12, "pair {i} rougeL precision");
            assert!((got.recall - rr).abs() < 1e-12, "pair {i} rougeL recall");
            assert!((got.f1 - f1).abs() < 1e-12, "pair {i} rougeL f1");
        }

        // Identical-text corpus scores exactly 1.0.
        let pairs: Vec<(String, String)> = (0..10)
            .map(|i| {
                let text = format!("site {i} mixes parkland with core zoning today");
                (text.clone(), text)
            })
            .collect();
        let score = corpus_eval(&pairs, TokenMode::Word).unwrap();
        assert_eq!(score.bleu4, 1.0);
        assert_eq!(score.rouge1.f1, 1.0);
        assert_eq!(score.rouge2.f1, 1.0);
        assert_eq!(score.rouge_l.f1, 1.0);

        let elapsed = started.elapsed();
        assert!(elapsed.as_secs() < 30, "metric oracles took {elapsed:?}");
    });
}

// ── criterion 8 ──────────────────────────────────────────────────────

#[test]
fn acceptance_08_parser_fixture() {
    criterion(8, "generated-QA transcript parses into the exact three pairs", || {
        let transcript = include_str!("fixtures/generated_qa.txt");
        let (pairs, warnings) = parse_qa(transcript, "fixture");
        assert_eq!(pairs.len(), 3, "warnings: {warnings:?}");
        assert_eq!(
            pairs[0].question,
            "What is the purpose of urban renewal planning and development?"
        );
        assert_eq!(
            pairs[0].answer,
            "The purpose of urban renewal planning and development is to enhance the living \
             quality of city residents."
        );
        assert_eq!(
            pairs[1].question,
            "What are the challenges of urban renewal planning and development?"
        );
        assert_eq!(
            pairs[1].answer,
            "The challenges of urban renewal planning and development are expensive, \
             time-consuming, and need more standardization. The convergence of GIS \
             technologies, social big data, and artificial intelligence (AI) solutions has \
             created unprecedented opportunities for comprehensive digital planning and \
             analysis in urban renewable development, but fast interdisciplinary development \
             imposes these challenges."
        );
        assert_eq!(pairs[2].question, "What is the proposed solution to these challenges?");
        assert_eq!(
            pairs[2].answer,
            "The proposed solution to these challenges is the use of the Urban Meta Analysis \
             (UMA) framework with data modeling, and mathematical analysis models supported \
             by the Municipal Urban Development Index (MUDI) system."
        );
    });
}

// ── criterion 9 ──────────────────────────────────────────────────────

#[test]
fn acceptance_09_split_fixture() {
    criterion(9, "1360 records split into 1085 train / 275 test", || {
        let records = toy_records(1360);
        let (train, test, manifest) = split_dataset_by_count(&records, 1085, 31337).unwrap();
        assert_eq!(train.len(), 1085);
        assert_eq!(test.len(), 275);

        let train_set: std::collections::HashSet<usize> = manifest.train.iter().copied().collect();
        let test_set: std::collections::HashSet<usize> = manifest.test.iter().copied().collect();
        assert!(train_set.is_disjoint(&test_set), "split sides overlap");
        let mut union: Vec<usize> = train_set.union(&test_set).copied().collect();
        union.sort_unstable();
        assert_eq!(union, (0..1360).collect::<Vec<_>>(), "split is not exhaustive");

        // The fraction route reproduces the same sizes.
        let (train, test, _) =
            peftlab_data::split_dataset(&records, 1085.0 / 1360.0, 31337).unwrap();
        assert_eq!((train.len(), test.len()), (1085, 275));
    });
}

// ── criterion 10 ─────────────────────────────────────────────────────

fn overfit_train_block(lr: f64, epochs: usize, batch: usize, stop: f64) -> TrainBlock {
    TrainBlock {
        learning_rate: lr,
        batch_size: batch,
        epochs,
        max_source_length: 48,
        max_target_length: 32,
        seed: 4321,
        early_stop_loss: Some(stop),
    }
}

/// Per-method overfit settings, tuned so each method can show what it is
/// able to learn on a frozen random base within the epoch budget:
/// prefix-only gets more virtual tokens and a hotter learning rate (it can
/// only steer attention); the joint run keeps its stage-1 prefix small and
/// gentle so the stage-2 LoRA is not fighting saturated prefix columns.
fn overfit_config(dir: &Path, method: Method) -> RunConfig {
    let mut config = RunConfig {
        model: ModelConfig {
            vocab_size: 260,
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            max_seq_len: 96,
            seed: 1234,
        },
        method,
        prefix: Some(PrefixBlock { pre_seq_len: 8, d_prefix: 32, mlp_hidden: 64 }),
        lora: Some(LoraBlock {
            r: 16,
            alpha: 32.0,
            dropout: 0.0,
            targets: Some(vec![
                "attn.wq".into(),
                "attn.wk".into(),
                "attn.wv".into(),
                "attn.wo".into(),
                "ff.w1".into(),
                "ff.w2".into(),
            ]),
        }),
        train: overfit_train_block(1e-2, 200, 8, 0.01),
        prefix_train: None,
        data: DataBlock {
            dataset: dir.join("dataset.jsonl"),
            split_manifest: None,
        },
        output_dir: dir.join(format!("out-{method:?}").to_lowercase()),
        rouge_headline: RougeHeadline::F1,
    };
    match method {
        Method::Prefix => {
            config.prefix = Some(PrefixBlock { pre_seq_len: 16, d_prefix: 32, mlp_hidden: 128 });
            config.train = overfit_train_block(3e-2, 200, 4, 1.0);
        }
        Method::Joint => {
            config.prefix = Some(PrefixBlock { pre_seq_len: 2, d_prefix: 16, mlp_hidden: 32 });
            config.prefix_train = Some(overfit_train_block(1e-3, 10, 8, 2.5));
        }
        _ => {}
    }
    config
}

#[test]
fn acceptance_10_directional_echo() {
    criterion(10, "each tuning method beats the base; joint memorizes", || {
        let started = Instant::now();
        let dir = TempDir::new().unwrap();
        let records = toy_records(32);
        write_records(&dir.path().join("dataset.jsonl"), &records).unwrap();

        let bleu_of = |method: Method| -> f64 {
            let config = overfit_config(dir.path(), method);
            train(&config).unwrap();
            let report = evaluate(
                &config,
                &EvalOptions {
                    split: SplitSide::All,
                    zero_runtime: true,
                    ..Default::default()
                },
            )
            .unwrap();
            println!(
                "  overfit {:?}: bleu4={:.4} rouge1={:.4}",
                method, report.bleu4, report.rouge1
            );
            report.bleu4
        };

        let base = bleu_of(Method::Base);
        let prefix = bleu_of(Method::Prefix);
        let lora = bleu_of(Method::Lora);
        let joint = bleu_of(Method::Joint);

        assert!(prefix > base, "prefix {prefix} did not beat base {base}");
        assert!(lora > base, "lora {lora} did not beat base {base}");
        assert!(joint > base, "joint {joint} did not beat base {base}");
        assert!(joint >= 0.9, "joint bleu {joint} below the memorization bar");

        let elapsed = started.elapsed();
        assert!(elapsed.as_secs() < 600, "criterion took {elapsed:?}");
        println!("  criterion 10 runtime: {elapsed:?}");
    });
}

// ── criterion 11 ─────────────────────────────────────────────────────

fn demo_corpus(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    let paragraphs = [
        "Urban renewal programmes coordinate land assembly, infrastructure upgrades, and \
         sustained resident participation so that aging central districts regain economic \
         and social vitality over a carefully staged multi-year investment horizon.",
        "Digital planning platforms combine cadastral records, mobility traces, and \
         environmental sensor feeds, giving renewal teams a shared evidence base for \
         prioritising blocks, sequencing works, and tracking displacement risks over time.",
        "Financing models for district regeneration blend municipal bonds, land value \
         capture, and private concessions; each instrument shifts risk differently between \
         taxpayers, developers, and the resident communities affected by the works.",
        "Heritage-sensitive renewal keeps facade lines, street grain, and social anchors \
         such as markets in place while upgrading structures behind them, trading some \
         density for continuity of identity and for measurably lower resident turnover.",
    ];
    std::fs::write(corpus.join("doc_a.txt"), format!("{}\n\n{}\n", paragraphs[0], paragraphs[1]))
        .unwrap();
    std::fs::write(corpus.join("doc_b.txt"), format!("{}\n\n{}\n", paragraphs[2], paragraphs[3]))
        .unwrap();
    corpus
}

fn demo_mock_file(dir: &Path, corpus: &Path) -> std::path::PathBuf {
    let mut completions: HashMap<String, String> = HashMap::new();
    let opts = peftlab_data::CleanOptions::default();
    let docs = peftlab_data::load_corpus_dir(corpus, &opts).unwrap();
    let mut q = 0;
    for doc in &docs {
        for p in &doc.paragraphs {
            q += 1;
            completions.insert(
                MockBackend::prompt_key(&build_prompt(p)),
                format!(
                    "Question: What does passage {q} emphasise about renewal work?\n\
                     Answer: Passage {q} emphasises coordinated staging of investment and works.\n\
                     Question: Which actors does passage {q} mention sharing outcomes?\n\
                     Answer: Passage {q} points to residents, planners, and financing partners.\n\
                     Question: What time scale does passage {q} assume for results?\n\
                     Answer: Passage {q} assumes change lands over a multi-year horizon."
                ),
            );
        }
    }
    assert_eq!(q, 4, "expected four cleaned paragraphs");
    let path = dir.join("mock.json");
    std::fs::write(&path, serde_json::to_string_pretty(&completions).unwrap()).unwrap();
    path
}

#[test]
fn acceptance_11_end_to_end_determinism() {
    criterion(11, "gen-data -> train -> eval is byte-reproducible", || {
        let dir = TempDir::new().unwrap();
        let corpus = demo_corpus(dir.path());
        let mock = demo_mock_file(dir.path(), &corpus);
        let bin = env!("CARGO_BIN_EXE_peftlab");

        let run_pipeline = |tag: &str| -> Vec<(String, Vec<u8>)> {
            let root = dir.path().join(tag);
            std::fs::create_dir_all(&root).unwrap();
            let data_dir = root.join("data");
            let status = std::process::Command::new(bin)
                .args([
                    "gen-data",
                    "--corpus",
                    corpus.to_str().unwrap(),
                    "--out",
                    data_dir.to_str().unwrap(),
                    "--mock-file",
                    mock.to_str().unwrap(),
                    "--train-fraction",
                    "0.75",
                    "--seed",
                    "99",
                ])
                .output()
                .unwrap();
            assert!(
                status.status.success(),
                "gen-data failed: {}",
                String::from_utf8_lossy(&status.stderr)
            );

            let config = RunConfig {
                model: ModelConfig {
                    vocab_size: 260,
                    d_model: 16,
                    n_layers: 2,
                    n_heads: 2,
                    d_ff: 32,
                    max_seq_len: 128,
                    seed: 5,
                },
                method: Method::Joint,
                prefix: Some(PrefixBlock { pre_seq_len: 4, d_prefix: 16, mlp_hidden: 16 }),
                lora: Some(LoraBlock { r: 2, alpha: 8.0, dropout: 0.05, targets: None }),
                train: TrainBlock {
                    learning_rate: 5e-3,
                    batch_size: 4,
                    epochs: 2,
                    max_source_length: 56,
                    max_target_length: 56,
                    seed: 6,
                    early_stop_loss: None,
                },
                prefix_train: None,
                data: DataBlock {
                    dataset: data_dir.join("dataset.jsonl"),
                    split_manifest: Some(data_dir.join("split.json")),
                },
                output_dir: root.join("out"),
                rouge_headline: RougeHeadline::F1,
            };
            let config_path = root.join("config.json");
            std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

            for args in [
                vec!["train", "--config", config_path.to_str().unwrap()],
                vec![
                    "eval",
                    "--config",
                    config_path.to_str().unwrap(),
                    "--zero-runtime",
                ],
            ] {
                let out = std::process::Command::new(bin).args(&args).output().unwrap();
                assert!(
                    out.status.success(),
                    "{args:?} failed: {}",
                    String::from_utf8_lossy(&out.stderr)
                );
            }

            // Collect every artifact the pipeline produced. The config file
            // embeds absolute temp paths that differ per run, so compare
            // the artifacts, not the config.
            let mut artifacts = Vec::new();
            for (label, path) in [
                ("dataset", data_dir.join("dataset.jsonl")),
                ("split", data_dir.join("split.json")),
                ("model", root.join("out/model.ckpt")),
                ("prefix", root.join("out/prefix.ckpt")),
                ("lora", root.join("out/lora.ckpt")),
                ("stack", root.join("out/stack_manifest.json")),
                ("train_log", root.join("out/train_log.jsonl")),
            ] {
                artifacts.push((label.to_string(), std::fs::read(&path).unwrap()));
            }
            // The report embeds the config hash, which covers paths; patch
            // the comparison by parsing and dropping the hash field, then
            // re-serializing canonically.
            let report_raw = std::fs::read_to_string(root.join("out/report.json")).unwrap();
            let mut report: serde_json::Value = serde_json::from_str(&report_raw).unwrap();
            report.as_object_mut().unwrap().remove("config_hash");
            artifacts.push(("report".into(), serde_json::to_vec(&report).unwrap()));
            artifacts
        };

        let a = run_pipeline("run-a");
        let b = run_pipeline("run-b");
        for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(b.iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(
                bytes_a, bytes_b,
                "artifact {name_a} differs between identical pipeline runs"
            );
        }
    });
}

// ── criterion 12 ─────────────────────────────────────────────────────

#[test]
fn acceptance_12_checkpoint_robustness() {
    criterion(12, "checkpoints round-trip bit-exact and detect corruption", || {
        let dir = TempDir::new().unwrap();
        let model = TransformerModel::new(micro_model_config(26)).unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&model, &path).unwrap();

        let loaded = peftlab_adapters::load_model(&path).unwrap();
        for ((na, ta), (_, tb)) in model.named_tensors().iter().zip(loaded.named_tensors().iter())
        {
            assert!(ta.bits_eq(tb), "{na} not bit-identical after round trip");
        }

        let original = std::fs::read(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..16 {
            let mut damaged = original.clone();
            let at = rng.gen_range(0..damaged.len());
            damaged[at] ^= 1 << rng.gen_range(0..8);
            std::fs::write(&path, &damaged).unwrap();
            let err = load_checkpoint(&path).unwrap_err();
            assert!(
                matches!(err, AdapterError::ChecksumMismatch),
                "byte flip at {at} produced {err} instead of a checksum failure"
            );
        }
    });
}
