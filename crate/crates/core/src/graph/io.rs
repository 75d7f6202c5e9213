//! Text formats for graphs and update logs.
//!
//! Edge list: one edge per line, `ego alter label weight [last_interaction]`,
//! with `#` starting a comment. UIDs are decimal or `0x` hex; the optional
//! last interaction is in simulated seconds.
//!
//! Pair list: SNAP-style `a b` lines, read as an undirected, unweighted
//! graph (both directions, label `link`, weight 1).
//!
//! Update log: one JSON object per line with the record fields.

use std::io::{BufRead, Write};

use super::{EdgeUpdateRecord, SocialMultiGraph};
use crate::error::{Error, Result};
use crate::ids::{SimTime, Uid};

pub fn parse_edge_list<R: BufRead>(reader: R) -> Result<SocialMultiGraph> {
    let mut g = SocialMultiGraph::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(Error::ParseAt {
                line: lineno,
                message: format!("expected 4 or 5 fields, found {}", fields.len()),
            });
        }
        let at = |message: String| Error::ParseAt {
            line: lineno,
            message,
        };
        let ego: Uid = fields[0].parse().map_err(|e: Error| at(e.to_string()))?;
        let alter: Uid = fields[1].parse().map_err(|e: Error| at(e.to_string()))?;
        let weight: f64 = fields[3]
            .parse()
            .map_err(|_| at(format!("invalid weight `{}`", fields[3])))?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(at(format!("weight {weight} outside [0, 1]")));
        }
        let last = match fields.get(4) {
            Some(s) => {
                let secs: f64 = s
                    .parse()
                    .map_err(|_| at(format!("invalid timestamp `{s}`")))?;
                SimTime::from_secs_f64(secs)
            }
            None => SimTime::ZERO,
        };
        g.insert_edge(ego, alter, fields[2].into(), weight, last);
    }
    Ok(g)
}

pub fn parse_pair_list<R: BufRead>(reader: R) -> Result<SocialMultiGraph> {
    let mut g = SocialMultiGraph::new();
    let label: super::EdgeLabel = "link".into();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let at = |message: String| Error::ParseAt {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(at(format!("expected 2 fields, found {}", fields.len())));
        }
        let a: Uid = fields[0].parse().map_err(|e: Error| at(e.to_string()))?;
        let b: Uid = fields[1].parse().map_err(|e: Error| at(e.to_string()))?;
        g.ensure_vertex(a);
        g.ensure_vertex(b);
        if a != b {
            g.insert_edge(a, b, label.clone(), 1.0, SimTime::ZERO);
            g.insert_edge(b, a, label.clone(), 1.0, SimTime::ZERO);
        }
    }
    Ok(g)
}

pub fn write_edge_list<W: Write>(g: &SocialMultiGraph, mut w: W) -> Result<()> {
    writeln!(w, "# ego alter label weight last_interaction")?;
    for e in g.edges() {
        writeln!(
            w,
            "{} {} {} {} {}",
            e.ego,
            e.alter,
            e.label,
            e.weight,
            e.last_interaction.as_secs_f64()
        )?;
    }
    Ok(())
}

pub fn read_update_log<R: BufRead>(reader: R) -> Result<Vec<EdgeUpdateRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::ParseAt {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_update_log<W: Write>(records: &[EdgeUpdateRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::UpdateOp;

    #[test]
    fn parses_comments_hex_and_timestamps() {
        let text = "# header\n1 2 Facebook 0.1\n0x2 0x1 LinkedIn 0.4 3600 # trailing\n\n";
        let g = parse_edge_list(text.as_bytes()).unwrap();
        assert_eq!(g.edge_count(), 2);
        let s = g.edge(Uid(2), Uid(1), &"LinkedIn".into()).unwrap();
        assert_eq!(s.last_interaction, SimTime::from_secs_f64(3600.0));
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_edge_list("1 2 a 0.1\n1 2 a\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::ParseAt { line: 2, .. }));
        let err = parse_edge_list("1 2 a 1.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::ParseAt { line: 1, .. }));
    }

    #[test]
    fn pair_list_is_undirected() {
        let g = parse_pair_list("# FromNodeId ToNodeId\n0\t1\n1 2\n2 1\n3 3\n".as_bytes()).unwrap();
        assert_eq!(g.vertex_count(), 4);
        assert_eq!(g.edge_count(), 4);
        assert_eq!(g.edge(Uid(1), Uid(0), &"link".into()).unwrap().weight, 1.0);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = parse_edge_list("1 2 a 0.25 10\n2 1 b 0.5\n".as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        assert_eq!(parse_edge_list(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn update_log_json_lines() {
        let recs = vec![EdgeUpdateRecord {
            seq: 1,
            ego: Uid(1),
            alter: Uid(2),
            label: "Facebook".into(),
            op: UpdateOp::AdjustWeight,
            weight_delta_or_value: 0.01,
            issued_at: SimTime::from_secs_f64(2.5),
        }];
        let mut buf = Vec::new();
        write_update_log(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"op\":\"adjust-weight\""));
        assert_eq!(read_update_log(buf.as_slice()).unwrap(), recs);
    }
}
