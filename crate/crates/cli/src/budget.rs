use std::fs;

use anyhow::Result;
use biasblend::config::{RunConfig, RunManifest};
use biasblend::train::{budget_compare, BudgetRow};

use crate::run::prepare_data;

/// `16922724` → `16,922,724`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn render_table(rows: &[BudgetRow]) -> String {
    let mut s = format!(
        "{:<6} {:>12} {:>14} {:>10} {:>13} {:>7}\n",
        "model", "params", "interpolated", "baseline", "interpolated", "gain"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<6} {:>12} {:>14} {:>9.2}% {:>12.2}% {:>+7.2}\n",
            r.name,
            thousands(r.params),
            thousands(r.interpolated_params),
            r.baseline_top1,
            r.interpolated_top1,
            r.gain()
        ));
    }
    s
}

pub fn cmd_budget_compare(cfg: &RunConfig, force: bool) -> Result<()> {
    let train_cfg = cfg.train_config()?;
    let (train, test) = prepare_data(cfg)?;
    RunManifest::new(cfg).claim(&cfg.out, force)?;
    let rows = budget_compare(&train_cfg, &train, &test)?;
    let table = render_table(&rows);
    fs::write(cfg.out.join("budget.txt"), &table)?;
    fs::write(cfg.out.join("budget.json"), serde_json::to_vec_pretty(&rows)?)?;
    print!("{table}");
    Ok(())
}
