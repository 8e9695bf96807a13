//! Text and TSV rendering of metric reports.

use std::fmt::Write;

use canvasvae::metrics::MetricReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Tsv,
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn score(applicable: bool, x: f64) -> String {
    if applicable {
        pct(x)
    } else {
        "n/a".into()
    }
}

/// Scores as percentages, headline metrics first.
pub fn format_report(report: &MetricReport, split: &str, docs: usize, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Tsv => {
            out.push_str("metric\tvalue\n");
            writeln!(out, "split\t{split}").unwrap();
            writeln!(out, "documents\t{docs}").unwrap();
            writeln!(out, "s_reconst\t{}", pct(report.s_reconst)).unwrap();
            writeln!(out, "miou\t{}", pct(report.miou)).unwrap();
            writeln!(out, "s_gen\t{}", pct(report.s_gen)).unwrap();
            for a in &report.reconstruction {
                writeln!(out, "reconst.{}\t{}", a.name, score(a.applicable, a.score)).unwrap();
            }
            for a in &report.generation {
                writeln!(out, "gen.{}\t{}", a.name, score(a.applicable, a.score)).unwrap();
            }
        }
        Format::Text => {
            writeln!(out, "split      {split} ({docs} documents)").unwrap();
            writeln!(out, "S_reconst  {:>6}", pct(report.s_reconst)).unwrap();
            writeln!(out, "mIoU       {:>6}", pct(report.miou)).unwrap();
            writeln!(out, "S_gen      {:>6}", pct(report.s_gen)).unwrap();
            let width = report.generation.iter().map(|a| a.name.len()).max().unwrap_or(0).max(9);
            writeln!(out, "\n{:<width$}  {:>7} {:>7}", "attribute", "reconst", "gen").unwrap();
            for g in &report.generation {
                let r = report
                    .reconstruction
                    .iter()
                    .find(|r| r.name == g.name)
                    .map_or("-".to_string(), |r| score(r.applicable, r.score));
                writeln!(out, "{:<width$}  {:>7} {:>7}", g.name, r, score(g.applicable, g.score)).unwrap();
            }
        }
    }
    out
}
