//! OFF mesh reader. Only vertices are kept; faces are skipped unread.

use apf_core::geometry::{Point, PointCloud};

/// Upper bound on up-front vertex allocation, whatever the header claims.
const PREALLOC_CAP: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    /// 1-based line number of the offending (or missing) line.
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

/// Meaningful lines: comments stripped, blanks skipped, 1-based numbers kept.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_counts(line_no: usize, tokens: &[&str]) -> Result<usize, ParseError> {
    if !(2..=3).contains(&tokens.len()) {
        return Err(err(line_no, format!("expected vertex, face and edge counts, found {} fields", tokens.len())));
    }
    let mut counts = [0usize; 3];
    for (slot, tok) in counts.iter_mut().zip(tokens) {
        *slot = tok.parse().map_err(|_| err(line_no, format!("count `{tok}` is not a non-negative integer")))?;
    }
    if counts[0] == 0 {
        return Err(err(line_no, "mesh declares no vertices"));
    }
    Ok(counts[0])
}

pub fn parse_off(text: &str) -> Result<PointCloud, ParseError> {
    let mut lines = content_lines(text);
    let Some((first_no, first)) = lines.next() else {
        return Err(err(1, "empty file, expected `OFF` header"));
    };
    let Some(rest) = first.strip_prefix("OFF") else {
        return Err(err(first_no, "missing `OFF` header"));
    };
    let glued: Vec<&str> = rest.split_whitespace().collect();
    let vertices = if glued.is_empty() {
        let Some((no, line)) = lines.next() else {
            return Err(err(first_no + 1, "missing counts line"));
        };
        parse_counts(no, &line.split_whitespace().collect::<Vec<_>>())?
    } else {
        parse_counts(first_no, &glued)?
    };

    let mut points: Vec<Point> = Vec::with_capacity(vertices.min(PREALLOC_CAP));
    let mut last_no = first_no;
    while points.len() < vertices {
        let Some((no, line)) = lines.next() else {
            return Err(err(
                text.lines().count().max(last_no) + 1,
                format!("expected {vertices} vertices, found {}", points.len()),
            ));
        };
        last_no = no;
        let mut p = [0f32; 3];
        let mut fields = line.split_whitespace();
        for (axis, slot) in p.iter_mut().enumerate() {
            let tok = fields.next().ok_or_else(|| err(no, format!("vertex has {axis} coordinates, expected 3")))?;
            let v: f32 = tok.parse().map_err(|_| err(no, format!("coordinate `{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(no, format!("coordinate `{tok}` is not finite")));
            }
            *slot = v;
        }
        points.push(p);
    }
    PointCloud::new(points).map_err(|e| err(last_no, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_triangle() {
        let c = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(c.points(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn glued_header() {
        let c = parse_off("OFF4 0 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n").unwrap();
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = parse_off("# made by hand\nOFF\n\n2 0 0 # counts\n1 2 3\n\n# gap\n4 5 6 255 0 0\n").unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn short_vertex_list_names_next_line() {
        let e = parse_off("OFF\n5 0 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n").unwrap_err();
        assert_eq!(e.line, 7);
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(parse_off("").unwrap_err().line, 1);
        assert_eq!(parse_off("PLY\n").unwrap_err().line, 1);
        assert_eq!(parse_off("OFF\nx 0 0\n").unwrap_err().line, 2);
        assert_eq!(parse_off("OFF\n1 0 0\n0 zero 0\n").unwrap_err().line, 3);
        assert_eq!(parse_off("OFF\n1 0 0\n0 0\n").unwrap_err().line, 3);
        assert_eq!(parse_off("OFF\n1 0 0\n0 0 inf\n").unwrap_err().line, 3);
        assert_eq!(parse_off("OFF\n0 0 0\n").unwrap_err().line, 2);
        assert!(parse_off("OFF\n18446744073709551615 0 0\n1 2 3\n").is_err());
    }
}
