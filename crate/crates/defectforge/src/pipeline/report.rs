//! Report bundle: the strategy comparison table, loss-curve data, and
//! three-panel montages of filter decisions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::imgcore::{load_image, save_image, ImageBuffer};
use crate::pipeline::dataset::AttemptLog;
use crate::pipeline::strategy::StrategyResult;
use crate::pipeline::PipelineError;

/// Files written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub table_txt: PathBuf,
    pub table_json: PathBuf,
    pub loss_curves: PathBuf,
    pub montages: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct TableRow {
    strategy: char,
    description: String,
    stages: usize,
    train_pairs: Vec<usize>,
    auroc: f64,
    auroc_pct: String,
    best: bool,
}

/// Writes the comparison table (text and JSON), per-strategy loss curves, and
/// montages for a sample of filter decisions when a generation dataset
/// directory is supplied.
pub fn emit_report(
    results: &[StrategyResult],
    gen_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<ReportBundle, PipelineError> {
    assert!(!results.is_empty(), "report needs at least one result");
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Io { path: out_dir.to_path_buf(), reason: e.to_string() })?;

    let mut ordered: Vec<&StrategyResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.strategy.letter());
    let best = ordered
        .iter()
        .map(|r| r.auroc)
        .fold(f64::NEG_INFINITY, f64::max);

    let rows: Vec<TableRow> = ordered
        .iter()
        .map(|r| TableRow {
            strategy: r.strategy.letter(),
            description: r.description.clone(),
            stages: r.stage_loss_curves.len(),
            train_pairs: r.dataset_sizes.clone(),
            auroc: r.auroc,
            auroc_pct: format!("{:.1}", r.auroc * 100.0),
            best: r.auroc == best,
        })
        .collect();

    let mut text = String::new();
    text.push_str("strategy  description    stages  train-pairs        auroc\n");
    text.push_str("--------  -------------  ------  -----------------  -------\n");
    for row in &rows {
        let pairs = row
            .train_pairs
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("+");
        text.push_str(&format!(
            "{:<8}  {:<13}  {:<6}  {:<17}  {:>5}{}\n",
            row.strategy,
            row.description,
            row.stages,
            pairs,
            row.auroc_pct,
            if row.best { " *" } else { "" },
        ));
    }
    let table_txt = out_dir.join("strategy_table.txt");
    std::fs::write(&table_txt, &text)
        .map_err(|e| PipelineError::Io { path: table_txt.clone(), reason: e.to_string() })?;

    let table_json = out_dir.join("strategy_table.json");
    std::fs::write(&table_json, serde_json::to_string_pretty(&rows).expect("rows serialize"))
        .map_err(|e| PipelineError::Io { path: table_json.clone(), reason: e.to_string() })?;

    let curves: BTreeMap<char, &Vec<Vec<f64>>> = ordered
        .iter()
        .map(|r| (r.strategy.letter(), &r.stage_loss_curves))
        .collect();
    let loss_curves = out_dir.join("loss_curves.json");
    std::fs::write(
        &loss_curves,
        serde_json::to_string_pretty(&curves).expect("curves serialize"),
    )
    .map_err(|e| PipelineError::Io { path: loss_curves.clone(), reason: e.to_string() })?;

    let mut montages = Vec::new();
    if let Some(gen_dir) = gen_dir {
        montages = emit_montages(gen_dir, &out_dir.join("montages"), 3)?;
    }

    Ok(ReportBundle { table_txt, table_json, loss_curves, montages })
}

/// Builds up to `per_decision` montages for each decision class found in the
/// generation run's attempt log.
pub fn emit_montages(
    gen_dir: &Path,
    out_dir: &Path,
    per_decision: usize,
) -> Result<Vec<PathBuf>, PipelineError> {
    let log_path = gen_dir.join("filter_reports.jsonl");
    if !log_path.exists() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Io { path: out_dir.to_path_buf(), reason: e.to_string() })?;
    let text = std::fs::read_to_string(&log_path)
        .map_err(|e| PipelineError::Io { path: log_path.clone(), reason: e.to_string() })?;

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut montages = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let log: AttemptLog = serde_json::from_str(line).map_err(|e| {
            PipelineError::BadManifest { path: log_path.clone(), reason: e.to_string() }
        })?;
        let Some(candidate_rel) = &log.candidate_path else { continue };
        let count = counts.entry(log.decision.clone()).or_insert(0);
        if *count >= per_decision {
            continue;
        }
        *count += 1;

        let normal = load_image(&gen_dir.join(&log.normal_path))?;
        let candidate = load_image(&gen_dir.join(candidate_rel))?;
        let ratio = log.report.as_ref().map(|r| r.ratio).unwrap_or(0.0);
        let caption = format!("{} RATIO {:.2}", log.decision.to_uppercase(), ratio);
        let montage = render_montage(&normal, &candidate, &caption);
        let path = out_dir.join(format!(
            "{}_{}.png",
            log.decision.to_lowercase(),
            log.request_id
        ));
        save_image(&montage, &path)?;
        montages.push(path);
    }
    Ok(montages)
}

/// Three panels — normal, candidate, amplified difference — over a caption
/// strip with the decision text.
pub fn render_montage(normal: &ImageBuffer, candidate: &ImageBuffer, caption: &str) -> ImageBuffer {
    let gray_normal = crate::imgcore::to_grayscale(normal);
    let gray_candidate = crate::imgcore::to_grayscale(candidate);
    let (w, h) = (gray_normal.width(), gray_normal.height());
    let diff_data: Vec<u8> = gray_normal
        .data()
        .iter()
        .zip(gray_candidate.data())
        .map(|(&a, &b)| ((a as i32 - b as i32).abs() * 3).min(255) as u8)
        .collect();
    let diff = ImageBuffer::new(w, h, 1, diff_data);

    const GAP: u32 = 2;
    const CAPTION_H: u32 = 12;
    let total_w = w * 3 + GAP * 2;
    let total_h = h + CAPTION_H;
    let mut montage = ImageBuffer::filled(total_w, total_h, 1, 16);
    for (panel_idx, panel) in [&gray_normal, &gray_candidate, &diff].iter().enumerate() {
        let x0 = panel_idx as u32 * (w + GAP);
        for y in 0..h {
            for x in 0..w {
                montage.set(x0 + x, y, 0, panel.get(x, y, 0));
            }
        }
    }
    draw_text(&mut montage, caption, 2, h + 2, 230);
    montage
}

/// 5x7 bitmap glyphs for the caption strip: uppercase letters, digits, and a
/// little punctuation. Each byte is one row, low 5 bits used.
fn glyph(c: char) -> Option<[u8; 7]> {
    let bits = match c {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x0A, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        ' ' => [0x00; 7],
        _ => return None,
    };
    Some(bits)
}

/// Renders uppercase text into the image; unknown characters advance the
/// cursor like spaces.
pub fn draw_text(img: &mut ImageBuffer, text: &str, x: u32, y: u32, value: u8) {
    let mut cx = x;
    for c in text.chars() {
        let c = c.to_ascii_uppercase();
        if let Some(rows) = glyph(c) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..5u32 {
                    if row & (1 << (4 - dx)) != 0 {
                        let (px, py) = (cx + dx, y + dy as u32);
                        if px < img.width() && py < img.height() {
                            img.set(px, py, 0, value);
                        }
                    }
                }
            }
        }
        cx += 6;
        if cx + 5 >= img.width() {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::strategy::Strategy;

    fn result(strategy: Strategy, auroc: f64) -> StrategyResult {
        StrategyResult {
            strategy,
            description: strategy.describe().to_string(),
            stage_loss_curves: vec![vec![0.4, 0.2]],
            dataset_sizes: vec![100],
            auroc,
            global_seed: 7,
            wall_clock_ms: vec![0],
        }
    }

    #[test]
    fn single_result_formats_one_decimal_row() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = emit_report(&[result(Strategy::SimOnly, 0.966)], None, dir.path()).unwrap();
        let text = std::fs::read_to_string(&bundle.table_txt).unwrap();
        assert!(text.contains("96.6"), "table:\n{text}");
        assert_eq!(text.lines().count(), 3); // header, rule, one row
    }

    #[test]
    fn five_results_are_ordered_with_best_marked() {
        let dir = tempfile::tempdir().unwrap();
        // Deliberately shuffled input order.
        let results = vec![
            result(Strategy::SimThenGen, 0.987),
            result(Strategy::SimOnly, 0.966),
            result(Strategy::GenThenSim, 0.774),
            result(Strategy::Mixed, 0.965),
            result(Strategy::GenOnly, 0.872),
        ];
        let bundle = emit_report(&results, None, dir.path()).unwrap();
        let text = std::fs::read_to_string(&bundle.table_txt).unwrap();
        let body: Vec<&str> = text.lines().skip(2).collect();
        let letters: Vec<char> = body.iter().map(|l| l.chars().next().unwrap()).collect();
        assert_eq!(letters, vec!['a', 'b', 'c', 'd', 'e']);
        let starred: Vec<&&str> = body.iter().filter(|l| l.ends_with('*')).collect();
        assert_eq!(starred.len(), 1);
        assert!(starred[0].starts_with('e'));

        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&bundle.table_json).unwrap()).unwrap();
        assert_eq!(json.as_array().unwrap().len(), 5);
        assert_eq!(json[4]["auroc_pct"], "98.7");
        assert_eq!(json[4]["best"], true);
    }

    #[test]
    fn montage_renders_three_panels_and_caption() {
        let normal = ImageBuffer::filled(64, 64, 1, 100);
        let mut candidate = normal.clone();
        candidate.set(10, 10, 0, 200);
        let montage = render_montage(&normal, &candidate, "IRRELEVANT RATIO 0.02");
        assert_eq!(montage.width(), 64 * 3 + 4);
        assert_eq!(montage.height(), 64 + 12);
        // The caption strip contains lit pixels.
        let strip: u32 = (64..76)
            .flat_map(|y| (0..montage.width()).map(move |x| (x, y)))
            .map(|(x, y)| montage.get(x, y, 0) as u32)
            .sum();
        assert!(strip > 0);
        // The diff panel highlights the edited pixel.
        assert!(montage.get(2 * (64 + 2) + 10, 10, 0) > 0);
    }
}
