//! CoNLL-U reading and writing: 10 tab-separated columns, `#` comments,
//! blank-line sentence separators. Multiword ranges and empty nodes are
//! skipped on input.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::transition::DepTree;

use super::corpus::{Corpus, CorpusSentence};

/// Conventional PTB punctuation POS tags, used when stripping by tag list.
pub const PTB_PUNCT_TAGS: &[&str] = &["``", "''", ".", ",", ":", "-LRB-", "-RRB-"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PunctMode {
    Keep,
    /// UD convention: UPOS == PUNCT.
    Upos,
    /// Strip tokens whose tag is in the list (PTB-style).
    TagList(Vec<String>),
}

impl PunctMode {
    pub fn ptb_default() -> Self {
        PunctMode::TagList(PTB_PUNCT_TAGS.iter().map(|s| s.to_string()).collect())
    }

    fn is_punct(&self, tag: &str) -> bool {
        match self {
            PunctMode::Keep => false,
            PunctMode::Upos => tag == "PUNCT",
            PunctMode::TagList(list) => list.iter().any(|t| t == tag),
        }
    }
}

struct RawToken {
    form: String,
    tag: String,
    head: Option<usize>,
}

pub fn load_conllu(path: &Path, max_len: usize, punct: &PunctMode) -> Result<Corpus> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    load_conllu_reader(std::io::BufReader::new(file), max_len, punct)
}

pub fn load_conllu_str(src: &str, max_len: usize, punct: &PunctMode) -> Result<Corpus> {
    load_conllu_reader(src.as_bytes(), max_len, punct)
}

fn load_conllu_reader<R: BufRead>(reader: R, max_len: usize, punct: &PunctMode) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut tokens: Vec<RawToken> = Vec::new();
    let mut lineno = 0usize;
    for line in reader.lines() {
        lineno += 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            finish_sentence(&mut corpus, std::mem::take(&mut tokens), max_len, punct, lineno)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            // multiword range or empty node
            continue;
        }
        let expected: usize = id.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad token id `{id}`"),
        })?;
        if expected != tokens.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("token id `{id}` out of order, expected {}", tokens.len() + 1),
            });
        }
        let upos = cols[3];
        let xpos = cols[4];
        let tag = if upos == "_" { xpos } else { upos };
        if tag == "_" {
            return Err(Error::Parse { line: lineno, msg: "token has neither UPOS nor XPOS".into() });
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad head `{h}`"),
            })?),
        };
        tokens.push(RawToken { form: cols[1].to_string(), tag: tag.to_string(), head });
    }
    finish_sentence(&mut corpus, tokens, max_len, punct, lineno + 1)?;
    Ok(corpus)
}

fn finish_sentence(
    corpus: &mut Corpus,
    tokens: Vec<RawToken>,
    max_len: usize,
    punct: &PunctMode,
    lineno: usize,
) -> Result<()> {
    if tokens.is_empty() {
        return Ok(());
    }
    let n = tokens.len();
    let heads: Option<Vec<usize>> = tokens.iter().map(|t| t.head).collect();
    if let Some(hs) = &heads {
        for (i, &h) in hs.iter().enumerate() {
            if h > n {
                return Err(Error::Data(format!(
                    "near line {lineno}: head {h} of token {} out of range 0..={n}",
                    i + 1
                )));
            }
        }
    }
    let (tokens, heads) = strip_punctuation(tokens, heads, punct);
    if tokens.is_empty() || (max_len > 0 && tokens.len() > max_len) {
        return Ok(());
    }
    let gold = match heads {
        Some(hs) => Some(DepTree::new(hs).map_err(|e| {
            Error::Data(format!("near line {lineno}: invalid gold tree: {e}"))
        })?),
        None => None,
    };
    corpus.sentences.push(CorpusSentence {
        forms: tokens.iter().map(|t| t.form.clone()).collect(),
        tags: tokens.iter().map(|t| t.tag.clone()).collect(),
        gold,
    });
    Ok(())
}

/// Removes punctuation tokens; dependents of a removed token re-attach to
/// its head, following chains of removed tokens up to the root. If the
/// removal eliminates the root's token, the first re-attached candidate
/// becomes the new root and any further candidates attach to it.
fn strip_punctuation(
    tokens: Vec<RawToken>,
    heads: Option<Vec<usize>>,
    punct: &PunctMode,
) -> (Vec<RawToken>, Option<Vec<usize>>) {
    let removed: Vec<bool> = tokens.iter().map(|t| punct.is_punct(&t.tag)).collect();
    if !removed.iter().any(|&r| r) {
        return (tokens, heads);
    }
    let n = tokens.len();
    // old 1-based -> new 1-based for kept tokens
    let mut remap = vec![0usize; n + 1];
    let mut next = 0usize;
    for i in 0..n {
        if !removed[i] {
            next += 1;
            remap[i + 1] = next;
        }
    }
    let new_heads = heads.map(|hs| {
        let resolve = |mut h: usize| -> usize {
            // climb past removed tokens
            while h != 0 && removed[h - 1] {
                h = hs[h - 1];
            }
            h
        };
        let mut out = Vec::with_capacity(next);
        let mut root_new: Option<usize> = None;
        for i in 0..n {
            if removed[i] {
                continue;
            }
            let h = resolve(hs[i]);
            if h == 0 {
                match root_new {
                    None => {
                        root_new = Some(remap[i + 1]);
                        out.push(0);
                    }
                    Some(r) => out.push(r),
                }
            } else {
                out.push(remap[h]);
            }
        }
        out
    });
    let kept = tokens
        .into_iter()
        .zip(removed)
        .filter(|(_, r)| !*r)
        .map(|(t, _)| t)
        .collect();
    (kept, new_heads)
}

/// Writes a corpus in CoNLL-U, HEAD column filled when trees are present.
pub fn write_conllu<W: Write>(out: &mut W, corpus: &Corpus) -> Result<()> {
    for s in &corpus.sentences {
        write_sentence(out, &s.forms, &s.tags, s.gold.as_ref())?;
    }
    Ok(())
}

pub fn write_sentence<W: Write>(
    out: &mut W,
    forms: &[String],
    tags: &[String],
    tree: Option<&DepTree>,
) -> Result<()> {
    for i in 0..forms.len() {
        let head = match tree {
            Some(t) => t.heads()[i].to_string(),
            None => "_".to_string(),
        };
        writeln!(
            out,
            "{}\t{}\t_\t{}\t_\t_\t{}\t_\t_\t_",
            i + 1,
            forms[i],
            tags[i],
            head
        )?;
    }
    writeln!(out)?;
    Ok(())
}

pub fn corpus_to_conllu_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_conllu(&mut buf, corpus).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("conllu output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: usize, form: &str, upos: &str, head: usize) -> String {
        format!("{id}\t{form}\t_\t{upos}\t_\t_\t{head}\t_\t_\t_")
    }

    #[test]
    fn simple_sentence_kept_verbatim() {
        let src = format!("{}\n{}\n\n", line(1, "a", "DT", 2), line(2, "b", "NN", 0));
        let c = load_conllu_str(&src, 10, &PunctMode::Upos).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].forms, vec!["a", "b"]);
        assert_eq!(c.sentences[0].gold.as_ref().unwrap().heads(), &[2, 0]);
    }

    #[test]
    fn trailing_punct_removed_heads_unchanged() {
        let src = format!(
            "{}\n{}\n{}\n\n",
            line(1, "a", "NOUN", 2),
            line(2, "b", "VERB", 0),
            line(3, ".", "PUNCT", 2)
        );
        let c = load_conllu_str(&src, 10, &PunctMode::Upos).unwrap();
        assert_eq!(c.sentences[0].forms, vec!["a", "b"]);
        assert_eq!(c.sentences[0].gold.as_ref().unwrap().heads(), &[2, 0]);
    }

    #[test]
    fn dependents_of_removed_punct_reattach_to_grandparent() {
        // 1 <- 3(punct) <- 2? no: token2 punct headed by 3; token1 headed by 2.
        let src = format!(
            "{}\n{}\n{}\n\n",
            line(1, "a", "NOUN", 2),
            line(2, ",", "PUNCT", 3),
            line(3, "b", "VERB", 0)
        );
        let c = load_conllu_str(&src, 10, &PunctMode::Upos).unwrap();
        // token a re-attaches to b (the punct's head), indices remapped
        assert_eq!(c.sentences[0].forms, vec!["a", "b"]);
        assert_eq!(c.sentences[0].gold.as_ref().unwrap().heads(), &[2, 0]);
    }

    #[test]
    fn long_sentence_dropped() {
        let body: Vec<String> = (1..=11).map(|i| line(i, "w", "NOUN", if i == 1 { 0 } else { 1 })).collect();
        let src = format!("{}\n\n", body.join("\n"));
        let c = load_conllu_str(&src, 10, &PunctMode::Keep).unwrap();
        assert!(c.is_empty());
        let c = load_conllu_str(&src, 11, &PunctMode::Keep).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn multiword_and_empty_nodes_skipped() {
        let src = format!(
            "1-2\tab\t_\t_\t_\t_\t_\t_\t_\t_\n{}\n{}\n3.1\tghost\t_\tX\t_\t_\t_\t_\t_\t_\n\n",
            line(1, "a", "DT", 2),
            line(2, "b", "NN", 0)
        );
        let c = load_conllu_str(&src, 10, &PunctMode::Keep).unwrap();
        assert_eq!(c.sentences[0].forms, vec!["a", "b"]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let src = "1\tonly\tthree\n";
        let err = load_conllu_str(src, 10, &PunctMode::Keep).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn head_out_of_range_is_a_data_error() {
        let src = format!("{}\n\n", line(1, "a", "NOUN", 4));
        assert!(matches!(load_conllu_str(&src, 10, &PunctMode::Keep), Err(Error::Data(_))));
    }

    #[test]
    fn ptb_tag_list_mode() {
        let src = format!(
            "{}\n{}\n{}\n\n",
            line(1, "a", "NN", 0),
            line(2, ",", ",", 1),
            line(3, "b", "NN", 1)
        );
        let c = load_conllu_str(&src, 10, &PunctMode::ptb_default()).unwrap();
        assert_eq!(c.sentences[0].forms, vec!["a", "b"]);
        assert_eq!(c.sentences[0].gold.as_ref().unwrap().heads(), &[0, 1]);
    }

    #[test]
    fn unannotated_head_column() {
        let src = "1\tw\t_\tNOUN\t_\t_\t_\t_\t_\t_\n\n";
        let c = load_conllu_str(src, 10, &PunctMode::Keep).unwrap();
        assert!(c.sentences[0].gold.is_none());
    }

    #[test]
    fn emit_parse_round_trip() {
        let src = format!(
            "{}\n{}\n{}\n\n{}\n\n",
            line(1, "x", "DET", 2),
            line(2, "y", "NOUN", 3),
            line(3, "z", "VERB", 0),
            line(1, "q", "VERB", 0)
        );
        let c = load_conllu_str(&src, 0, &PunctMode::Keep).unwrap();
        let emitted = corpus_to_conllu_string(&c);
        let reread = load_conllu_str(&emitted, 0, &PunctMode::Keep).unwrap();
        assert_eq!(c, reread);
        let emitted_again = corpus_to_conllu_string(&reread);
        assert_eq!(emitted, emitted_again);
    }

    #[test]
    fn removed_root_promotes_first_candidate() {
        // root is punctuation with two dependents
        let src = format!(
            "{}\n{}\n{}\n\n",
            line(1, "a", "NOUN", 2),
            line(2, "!", "PUNCT", 0),
            line(3, "b", "NOUN", 2)
        );
        let c = load_conllu_str(&src, 10, &PunctMode::Upos).unwrap();
        let t = c.sentences[0].gold.as_ref().unwrap();
        assert_eq!(t.heads(), &[0, 1]);
    }
}
