use std::path::Path;

use forgetgen::data::{parse_prompt_jsonl, parse_qa_jsonl, Split};
use forgetgen::decoder::DecodeConfig;
use forgetgen::metrics::{
    auc_roc, bleu, forget_quality, fq_gap, knowmem, min_k_score, model_utility, priv_leak, rouge_l_recall,
    verbmem, LexicalPair, MetricReport, VerbatimExample,
};
use forgetgen::retrieval::CosineReranker;
use forgetgen::Tokenizer;
use serde::{Deserialize, Serialize};

use super::{write_output, Artifacts};
use crate::backend::Backend;
use crate::config::{read_text, RunConfig};
use crate::error::CliError;

/// One model output for one evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub output: String,
    pub reference: String,
    #[serde(default = "forget_split")]
    pub split: Split,
    /// Truth ratio of the model on this example, when the caller scored it.
    #[serde(default)]
    pub truth_ratio: Option<f64>,
}

fn forget_split() -> Split {
    Split::Forget
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerbatimLine {
    text: String,
    prefix_tokens: usize,
}

fn load_records(path: &Path) -> Result<Vec<EvalRecord>, CliError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(line).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn check_aligned(unlearned: &[EvalRecord], retained: &[EvalRecord]) -> Result<(), CliError> {
    for (i, (u, r)) in unlearned.iter().zip(retained).enumerate() {
        if u.id != r.id || u.split != r.split {
            return Err(forgetgen::Error::InvalidInput(format!(
                "outputs are misaligned at record {} (id {:?} vs {:?})",
                i + 1,
                u.id,
                r.id
            ))
            .into());
        }
    }
    if unlearned.len() != retained.len() {
        let (longer, n) = if unlearned.len() > retained.len() {
            ("unlearned", retained.len())
        } else {
            ("retained", unlearned.len())
        };
        let extra = unlearned.get(n).or_else(|| retained.get(n)).expect("lengths differ");
        return Err(forgetgen::Error::InvalidInput(format!(
            "outputs are misaligned at record {}: id {:?} only in the {longer} file",
            n + 1,
            extra.id
        ))
        .into());
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Truth ratios of the forget records; `None` when no record carries one.
fn truth_ratios(records: &[&EvalRecord], which: &str) -> Result<Option<Vec<f64>>, CliError> {
    let present = records.iter().filter(|r| r.truth_ratio.is_some()).count();
    match present {
        0 => Ok(None),
        n if n == records.len() => Ok(Some(records.iter().filter_map(|r| r.truth_ratio).collect())),
        n => Err(forgetgen::Error::InvalidInput(format!(
            "{which}: {n} of {} forget records carry truth_ratio; all or none must",
            records.len()
        ))
        .into()),
    }
}

fn lexical(records: &[&EvalRecord], max_n: usize) -> Result<Vec<LexicalPair>, CliError> {
    records
        .iter()
        .map(|r| {
            Ok(LexicalPair {
                bleu: bleu(&r.reference, &r.output, max_n),
                rouge_l: rouge_l_recall(&r.reference, &r.output)?,
            })
        })
        .collect()
}

/// Scores unlearned outputs against retained-model outputs and writes a
/// metric report.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    unlearned: Option<&Path>,
    retained: Option<&Path>,
    out: Option<&Path>,
) -> Result<MetricReport, CliError> {
    let pick = |flag: Option<&Path>, key: &str, fallback: Option<&Path>| -> Result<std::path::PathBuf, CliError> {
        let p = flag
            .or(fallback)
            .ok_or_else(|| CliError::Usage(format!("no {key} outputs: pass --{key} or set evaluate.{key}")))?;
        if !p.is_file() {
            return Err(CliError::Usage(format!("{key} outputs not found: {}", p.display())));
        }
        Ok(p.to_path_buf())
    };
    let unlearned_path = pick(unlearned, "unlearned", cfg.evaluate.unlearned.as_deref())?;
    let retained_path = pick(retained, "retained", cfg.evaluate.retained.as_deref())?;
    let out = out.or(cfg.evaluate.output.as_deref());

    let u = load_records(&unlearned_path)?;
    let r = load_records(&retained_path)?;
    check_aligned(&u, &r)?;

    let forget = |v: &[EvalRecord]| -> Vec<EvalRecord> { v.iter().filter(|x| x.split == Split::Forget).cloned().collect() };
    let (u_forget, r_forget) = (forget(&u), forget(&r));
    if u_forget.is_empty() {
        return Err(forgetgen::Error::InvalidInput("no forget-split records to evaluate".into()).into());
    }
    let u_forget: Vec<&EvalRecord> = u_forget.iter().collect();
    let r_forget: Vec<&EvalRecord> = r_forget.iter().collect();
    let max_n = cfg.evaluate.bleu_max_n;

    let mut report = MetricReport::new();
    let u_lex = lexical(&u_forget, max_n)?;
    let r_lex = lexical(&r_forget, max_n)?;
    let f_rl = mean(u_lex.iter().map(|p| p.rouge_l)).expect("non-empty");
    report.insert("forget_rouge_l", f_rl, "mean ROUGE-L recall, unlearned, forget split");
    let f_bleu = mean(u_lex.iter().map(|p| p.bleu)).expect("non-empty");
    report.insert("forget_bleu", f_bleu, format!("mean BLEU-{max_n}, unlearned, forget split"));
    let retain_rl = u
        .iter()
        .filter(|x| x.split == Split::Retain)
        .map(|x| rouge_l_recall(&x.reference, &x.output))
        .collect::<forgetgen::Result<Vec<_>>>()?;
    if let Some(v) = mean(retain_rl.into_iter()) {
        report.insert("retain_rouge_l", v, "mean ROUGE-L recall, unlearned, retain split");
    }
    report.insert(
        "fq_gap",
        fq_gap(&u_lex, &r_lex)?,
        "|mean BLEU gap| + |mean ROUGE-L recall gap|, forget split",
    );
    match (truth_ratios(&u_forget, "unlearned")?, truth_ratios(&r_forget, "retained")?) {
        (Some(tu), Some(tr)) => {
            report.insert(
                "forget_quality",
                forget_quality(&tu, &tr)?,
                "two-sample KS p-value of forget truth ratios",
            );
        }
        _ => log::info!("truth ratios missing; forget_quality not reported"),
    }
    if let Some(scores) = &cfg.evaluate.utility_scores {
        report.insert("model_utility", model_utility(scores)?, "harmonic mean of utility scores");
    }
    model_metrics(cfg, &mut report)?;

    report.set_metadata("seed", cfg.seed.to_string());
    report.set_metadata("config_hash", format!("{:016x}", cfg.config_hash));
    report.set_metadata("backend", cfg.backend.name());
    report.set_metadata("unlearned", unlearned_path.display().to_string());
    report.set_metadata("retained", retained_path.display().to_string());
    report.set_metadata("records", u.len().to_string());

    write_output(out, &(report.to_json()? + "\n"))?;
    Ok(report)
}

/// Scores that need the model: memorization under guarded greedy decoding
/// and the min-k membership signal.
fn model_metrics(cfg: &RunConfig, report: &mut MetricReport) -> Result<(), CliError> {
    let e = &cfg.evaluate;
    if e.verbmem.is_none() && e.knowmem.is_none() && e.privleak.is_none() {
        return Ok(());
    }
    let backend = Backend::open(cfg)?;

    if e.verbmem.is_some() || e.knowmem.is_some() {
        let artifacts = Artifacts::load(cfg, &backend)?;
        let reranker = CosineReranker {
            embedder: backend.sentence_embedder(),
        };
        let mut guard_cfg = cfg.guard_config(&backend.tokenizer, &backend.vocab, backend.extractor())?;
        // One hypothesis, but each step still ranks the configured fanout of
        // candidates so penalized tokens can be stepped around.
        let fanout = guard_cfg.decode.fanout();
        guard_cfg.decode = DecodeConfig {
            beam_width: 1,
            max_new_tokens: e.max_new_tokens,
            expansion_fanout: Some(fanout),
            ..guard_cfg.decode
        };
        let guard = artifacts.guard(&backend, &reranker, guard_cfg)?;
        if let Some(path) = &e.verbmem {
            let text = read_text(path)?;
            let mut examples = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let v: VerbatimLine = serde_json::from_str(line).map_err(|err| CliError::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: err.to_string(),
                })?;
                examples.push(VerbatimExample {
                    text: v.text,
                    prefix_tokens: v.prefix_tokens,
                });
            }
            let tok: &dyn Tokenizer = &backend.tokenizer;
            report.insert("verbmem", verbmem(&guard, tok, &examples)?, "mean ROUGE-L F1 x100, guarded greedy");
        }
        if let Some(path) = &e.knowmem {
            let qa = parse_qa_jsonl(&read_text(path)?, &path.display().to_string())?;
            report.insert("knowmem", knowmem(&guard, &qa)?, "mean ROUGE-L F1 x100, guarded greedy");
        }
    }

    if let Some(pl) = &e.privleak {
        let score = |path: &Path| -> Result<Vec<f64>, CliError> {
            parse_prompt_jsonl(&read_text(path)?, &path.display().to_string())?
                .iter()
                .map(|p| Ok(min_k_score(backend.model(), &backend.tokenizer, &p.text, pl.k_fraction)?))
                .collect()
        };
        let auc = auc_roc(&score(&pl.members)?, &score(&pl.nonmembers)?)?;
        report.insert("privleak_auc", auc, format!("min-k AUC, k = {}", pl.k_fraction));
        report.insert(
            "privleak",
            priv_leak(auc, pl.auc_retrain)?,
            "relative AUC deviation from retrained x100",
        );
    }
    Ok(())
}
