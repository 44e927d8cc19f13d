use serde::{Deserialize, Serialize};

/// One table row: parameter accounting plus headline metrics, all metric
/// values as fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_label: String,
    pub total_params: u64,
    pub trainable_params: u64,
    pub trainable_ratio: f64,
    pub bleu4: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub runtime_seconds: f64,
    pub config_hash: String,
}

pub fn format_params_m(params: u64) -> String {
    format!("{:.2}M", params as f64 / 1e6)
}

pub fn format_pct(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

/// Ratio column: four decimals, enough to render per-mille trainable
/// shares without collapsing to 0.00%.
pub fn format_ratio_pct(fraction: f64) -> String {
    format!("{:.4}%", fraction * 100.0)
}

/// Fixed-width text table, one row per report. Parameters render in
/// millions with two decimals, metrics as percentages with two decimals; a
/// baseline row (zero trainable parameters) renders `-` in the trainable
/// columns.
pub fn report_table(reports: &[EvalReport]) -> String {
    assert!(!reports.is_empty(), "report_table needs at least one report");
    let header = [
        "Model",
        "Total Parameters",
        "Trainable Parameters",
        "Trainable %",
        "Bleu-4",
        "Rouge-1",
        "Rouge-2",
        "Rouge-l",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in reports {
        let (trainable, ratio) = if r.trainable_params == 0 {
            ("-".to_string(), "-".to_string())
        } else {
            (format_params_m(r.trainable_params), format_ratio_pct(r.trainable_ratio))
        };
        rows.push(vec![
            r.model_label.clone(),
            format_params_m(r.total_params),
            trainable,
            ratio,
            format_pct(r.bleu4),
            format_pct(r.rouge1),
            format_pct(r.rouge2),
            format_pct(r.rouge_l),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
