//! Text encodings of backbone genomes.
//!
//! Two forms are accepted. The compact form writes each gene as five (or
//! six) single digits, genes separated by dashes or whitespace:
//! `21211-31112-21221-32112`. The canonical form separates integers with
//! commas so class ids above 9 are representable: `2,1,2,1,1-17,1,1,1,1`.
//! Formatting always produces the canonical form.

use std::fmt;

use thiserror::Error;

use super::{BackboneGenome, LivGene};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("genome parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        Self { position, message: message.into() }
    }
}

fn segments(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        let sep = ch == '-' || ch.is_whitespace();
        match (sep, start) {
            (true, Some(s)) => {
                out.push((s, &text[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out
}

fn parse_segment(offset: usize, seg: &str) -> Result<Vec<u32>, ParseError> {
    let values: Vec<u32> = if seg.contains(',') {
        let mut values = Vec::new();
        let mut pos = offset;
        for part in seg.split(',') {
            let trimmed = part.trim();
            let v = trimmed
                .parse::<u32>()
                .map_err(|_| ParseError::new(pos, format!("expected an integer, found {part:?}")))?;
            values.push(v);
            pos += part.len() + 1;
        }
        values
    } else {
        seg.char_indices()
            .map(|(i, c)| {
                c.to_digit(10)
                    .ok_or_else(|| ParseError::new(offset + i, format!("unexpected character {c:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    if values.len() != 5 && values.len() != 6 {
        return Err(ParseError::new(
            offset,
            format!("a gene has 5 or 6 integers, found {} in {seg:?}", values.len()),
        ));
    }
    Ok(values)
}

pub fn parse(text: &str) -> Result<BackboneGenome, ParseError> {
    let genes = segments(text)
        .into_iter()
        .map(|(offset, seg)| {
            let v = parse_segment(offset, seg)?;
            Ok(LivGene {
                liv_class: v[0],
                feat_share_group: v[1],
                feat_share_strategy: v[2],
                group_share_group: v[3],
                group_share_strategy: v[4],
                residual_group: v.get(5).copied(),
            })
        })
        .collect::<Result<Vec<_>, ParseError>>()?;
    Ok(BackboneGenome::new(genes))
}

pub fn format(genome: &BackboneGenome) -> String {
    genome.to_string()
}

/// The compact digit form, if every value is a single digit.
pub fn format_compact(genome: &BackboneGenome) -> Option<String> {
    let mut parts = Vec::with_capacity(genome.depth());
    for gene in genome.genes() {
        let values = gene.values();
        if values.iter().any(|&v| v > 9) {
            return None;
        }
        parts.push(values.iter().map(|v| v.to_string()).collect::<String>());
    }
    Some(parts.join("-"))
}

impl fmt::Display for LivGene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values = self.values();
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl fmt::Display for BackboneGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, gene) in self.genes().iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{gene}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for BackboneGenome {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_example() {
        let g = parse("21211-31112-21221-32112").unwrap();
        assert_eq!(g.depth(), 4);
        assert_eq!(g.genes()[0].values(), vec![2, 1, 2, 1, 1]);
        assert_eq!(g.genes()[3].values(), vec![3, 2, 1, 1, 2]);
        assert_eq!(format(&g), "2,1,2,1,1-3,1,1,1,2-2,1,2,2,1-3,2,1,1,2");
        assert_eq!(format_compact(&g).unwrap(), "21211-31112-21221-32112");
    }

    #[test]
    fn whitespace_separated_compact() {
        let g = parse("11111 91111 12121 92121").unwrap();
        assert_eq!(format(&g), "1,1,1,1,1-9,1,1,1,1-1,2,1,2,1-9,2,1,2,1");
        assert_eq!(parse(&format(&g)).unwrap(), g);
    }

    #[test]
    fn canonical_round_trip_with_large_class() {
        let text = "2,1,2,1,1-17,1,1,1,1";
        let g = parse(text).unwrap();
        assert_eq!(g.genes()[1].liv_class, 17);
        assert_eq!(format(&g), text);
        assert!(format_compact(&g).is_none());
    }

    #[test]
    fn six_entry_genes() {
        let g = parse("111111-911112").unwrap();
        assert_eq!(g.genes()[1].residual_group, Some(2));
        assert_eq!(format(&g), "1,1,1,1,1,1-9,1,1,1,1,2");
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("21211-3x112").unwrap_err();
        assert_eq!(e.position, 7);
        let e = parse("21211-3111").unwrap_err();
        assert_eq!(e.position, 6);
        let e = parse("1,1,1,q,1").unwrap_err();
        assert_eq!(e.position, 6);
    }

    #[test]
    fn empty_text_is_empty_genome() {
        let g = parse("").unwrap();
        assert_eq!(g.depth(), 0);
        assert_eq!(format(&g), "");
    }
}
