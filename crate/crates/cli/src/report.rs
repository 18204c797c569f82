//! Aggregates metrics CSV files into one comparison table.

use std::fmt::Write as _;

use crate::metrics::MetricsRow;

/// Nearest-rank percentile of an unsorted sample; `q` in (0, 1].
fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

/// Aggregate statistics for one metrics file.
#[derive(Clone, PartialEq, Debug)]
pub struct FileSummary {
    pub name: String,
    pub mode: String,
    pub rows: usize,
    pub updates: u64,
    pub violations: u64,
    pub work_mean: f64,
    pub work_p50: u64,
    pub work_p95: u64,
    pub work_max: u64,
    pub rounds: u64,
    pub tokens: u64,
    pub messages: u64,
}

pub fn summarize(name: &str, rows: &[MetricsRow]) -> FileSummary {
    let mut work: Vec<u64> = rows.iter().map(|r| r.work_units).collect();
    work.sort_unstable();
    let total: u64 = work.iter().sum();
    FileSummary {
        name: name.to_string(),
        mode: rows.first().map_or_else(|| "-".to_string(), |r| r.mode.to_string()),
        rows: rows.len(),
        updates: rows.iter().map(|r| r.update_index).max().unwrap_or(0),
        violations: rows.iter().filter(|r| !r.properness_ok).count() as u64,
        work_mean: if work.is_empty() { 0.0 } else { total as f64 / work.len() as f64 },
        work_p50: percentile(&work, 0.50),
        work_p95: percentile(&work, 0.95),
        work_max: work.last().copied().unwrap_or(0),
        rounds: rows.iter().map(|r| r.rounds).sum(),
        tokens: rows.iter().map(|r| r.tokens_created).sum(),
        messages: rows.iter().map(|r| r.messages).sum(),
    }
}

const HEADERS: [&str; 12] = [
    "file", "mode", "rows", "updates", "viol", "work.mean", "work.p50", "work.p95", "work.max",
    "rounds", "tokens", "messages",
];

/// Render one aligned text row per summary, stable for fixed inputs.
pub fn render(summaries: &[FileSummary]) -> String {
    let cells: Vec<[String; 12]> = summaries
        .iter()
        .map(|s| {
            [
                s.name.clone(),
                s.mode.clone(),
                s.rows.to_string(),
                s.updates.to_string(),
                s.violations.to_string(),
                format!("{:.2}", s.work_mean),
                s.work_p50.to_string(),
                s.work_p95.to_string(),
                s.work_max.to_string(),
                s.rounds.to_string(),
                s.tokens.to_string(),
                s.messages.to_string(),
            ]
        })
        .collect();
    let mut widths: [usize; 12] = HEADERS.map(str::len);
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, h) in HEADERS.iter().enumerate() {
        if i > 0 {
            out.push_str("  ");
        }
        // Labels left-aligned, numeric columns right-aligned.
        if i < 2 {
            write!(out, "{h:<w$}", w = widths[i]).expect("writing to a String cannot fail");
        } else {
            write!(out, "{h:>w$}", w = widths[i]).expect("writing to a String cannot fail");
        }
    }
    out.push('\n');
    for row in &cells {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i < 2 {
                write!(out, "{cell:<w$}", w = widths[i]).expect("writing to a String cannot fail");
            } else {
                write!(out, "{cell:>w$}", w = widths[i]).expect("writing to a String cannot fail");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Mode;

    fn row(update_index: u64, work: u64, ok: bool) -> MetricsRow {
        MetricsRow {
            update_index,
            mode: Mode::Seq,
            work_units: work,
            chain_length: 0,
            rounds: 2,
            tokens_created: 1,
            messages: 5,
            properness_ok: ok,
        }
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let sorted: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&sorted, 0.50), 50);
        assert_eq!(percentile(&sorted, 0.95), 95);
        assert_eq!(percentile(&sorted, 1.0), 100);
        assert_eq!(percentile(&[7], 0.5), 7);
        assert_eq!(percentile(&[], 0.5), 0);
    }

    #[test]
    fn summaries_aggregate_the_obvious_way() {
        let rows: Vec<MetricsRow> =
            (1..=10).map(|i| row(i, i, i != 4)).collect();
        let s = summarize("x.csv", &rows);
        assert_eq!(s.rows, 10);
        assert_eq!(s.updates, 10);
        assert_eq!(s.violations, 1);
        assert_eq!(s.work_mean, 5.5);
        assert_eq!(s.work_p50, 5);
        assert_eq!(s.work_p95, 10);
        assert_eq!(s.work_max, 10);
        assert_eq!(s.rounds, 20);
        assert_eq!(s.tokens, 10);
        assert_eq!(s.messages, 50);
    }

    #[test]
    fn table_lines_stay_aligned() {
        let a = summarize("short.csv", &[row(1, 3, true)]);
        let b = summarize("a-much-longer-name.csv", &(1..=50).map(|i| row(i, i * 1000, true)).collect::<Vec<_>>());
        let text = render(&[a, b]);
        let lens: Vec<usize> = text.lines().map(str::len).collect();
        assert_eq!(lens.len(), 3);
        assert!(lens.windows(2).all(|w| w[0] == w[1]), "ragged table:\n{text}");
    }
}
