//! Detection output and PR curve text files.

use std::fmt::Write as _;

use crate::anchors::BoxXYWH;
use crate::detect::{Detection, PrPoint};
use crate::error::{Error, Result};

/// Per image: identifier line, count line, then `x y w h score` lines with
/// four decimals.
pub fn format_detections(images: &[(String, Vec<Detection>)]) -> String {
    let mut s = String::new();
    for (id, dets) in images {
        let _ = writeln!(s, "{id}\n{}", dets.len());
        for d in dets {
            let b = d.bbox;
            let _ = writeln!(s, "{:.4} {:.4} {:.4} {:.4} {:.4}", b.x, b.y, b.w, b.h, d.score);
        }
    }
    s
}

/// Reads a detection file; levels are unknown and set to 0. Boxes that
/// rounded to zero extent are skipped.
pub fn parse_detections(text: &str) -> Result<Vec<(String, Vec<Detection>)>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let id = lines[i].trim();
        if id.is_empty() {
            i += 1;
            continue;
        }
        let count: usize = lines
            .get(i + 1)
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::parse(i + 2, format!("malformed detection count for `{id}`")))?;
        i += 2;
        let mut dets = Vec::with_capacity(count);
        for _ in 0..count {
            let line_no = i + 1;
            let v: Vec<f64> = lines
                .get(i)
                .ok_or_else(|| Error::parse(line_no, format!("`{id}` is truncated")))?
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| Error::parse(line_no, format!("non-numeric field `{s}`"))))
                .collect::<Result<_>>()?;
            if v.len() != 5 {
                return Err(Error::parse(line_no, format!("expected `x y w h score`, got {} fields", v.len())));
            }
            if let Ok(bbox) = BoxXYWH::new(v[0], v[1], v[2], v[3]) {
                dets.push(Detection { bbox, score: v[4], level: 0 });
            }
            i += 1;
        }
        out.push((id.to_string(), dets));
    }
    Ok(out)
}

/// `threshold precision recall` lines.
pub fn format_pr(points: &[PrPoint]) -> String {
    let mut s = String::new();
    for p in points {
        let _ = writeln!(s, "{:.3} {:.4} {:.4}", p.threshold, p.precision, p.recall);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detections_golden_and_round_trip() {
        let d = Detection { bbox: BoxXYWH::new(1.0, 2.5, 30.125, 4.0).unwrap(), score: 0.87654, level: 2 };
        let text = format_detections(&[("img/a.ppm".into(), vec![d]), ("b".into(), vec![])]);
        assert_eq!(text, "img/a.ppm\n1\n1.0000 2.5000 30.1250 4.0000 0.8765\nb\n0\n");
        let back = parse_detections(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].1[0].bbox, d.bbox);
        assert_eq!(back[0].1[0].score, 0.8765);
        assert!(back[1].1.is_empty());
        assert_eq!(format_detections(&back), text);
    }

    #[test]
    fn detection_errors() {
        assert!(matches!(parse_detections("a\nx\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_detections("a\n2\n1 1 1 1 0.5\n"), Err(Error::Parse { line: 4, .. })));
        assert!(matches!(parse_detections("a\n1\n1 1 1 0.5\n"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn pr_golden() {
        let p = [PrPoint { threshold: 1.0, precision: 1.0, recall: 0.0 }, PrPoint { threshold: 0.999, precision: 2.0 / 3.0, recall: 0.5 }];
        assert_eq!(format_pr(&p), "1.000 1.0000 0.0000\n0.999 0.6667 0.5000\n");
    }
}
