//! On-disk index layout.
//!
//! ```text
//! <dir>/meta                 text header, last line `checksum <16 hex>`
//! <dir>/shard-<i>.postings   binary postings, trailing 8-byte checksum
//! <dir>/shard-<i>.store      binary passage table, trailing 8-byte checksum
//! ```
//!
//! Integers are little-endian; strings are `u32` length + UTF-8 bytes. The
//! checksum is the first 8 bytes of the SHA-256 of everything before it.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::corpus::Field;
use crate::error::{Error, Result};
use crate::index::shard::{IndexShard, Posting, PostingList, StoredPassage};
use crate::index::{Bm25Params, Index};
use crate::textproc::Analyzer;

pub const FORMAT_VERSION: u32 = 1;
const META_MAGIC: &str = "vertsearch-index";
const POSTINGS_MAGIC: &[u8; 4] = b"VSPO";
const STORE_MAGIC: &[u8; 4] = b"VSST";

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn postings_path(dir: &Path, shard: u32) -> PathBuf {
    dir.join(format!("shard-{shard}.postings"))
}

fn store_path(dir: &Path, shard: u32) -> PathBuf {
    dir.join(format!("shard-{shard}.store"))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn finish(mut self) -> Vec<u8> {
        let sum = checksum(&self.0);
        self.0.extend_from_slice(&sum);
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: &str) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            message: format!("{message} at byte {}", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(self.corrupt("unexpected end of data"));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("invalid utf-8"))
    }

    fn done(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(self.corrupt("trailing bytes"))
        }
    }
}

/// Reads a binary file, verifies magic, version and checksum, and returns the
/// payload after the header.
fn read_checked(path: &Path, magic: &[u8; 4], shard: u32) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 + 12 || &bytes[..4] != magic {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            message: "bad magic or truncated file".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != sum {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let stored_shard = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if stored_shard != shard {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            message: format!("file belongs to shard {stored_shard}"),
        });
    }
    Ok(body[12..].to_vec())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn header(magic: &[u8; 4], shard: u32) -> Writer {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(magic);
    w.u32(FORMAT_VERSION);
    w.u32(shard);
    w
}

pub fn save_index(index: &Index, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = index.meta();

    for shard in index.shards() {
        let mut w = header(POSTINGS_MAGIC, shard.shard_id);
        let mut terms: Vec<(&str, &PostingList)> = shard.terms().collect();
        terms.sort_unstable_by_key(|(t, _)| *t);
        w.u32(terms.len() as u32);
        for (term, list) in terms {
            w.str(term);
            w.u32(list.entries.len() as u32);
            for p in &list.entries {
                w.u32(p.local);
                w.u32(p.tf);
            }
        }
        write_file(&postings_path(dir, shard.shard_id), &w.finish())?;

        let mut w = header(STORE_MAGIC, shard.shard_id);
        w.u32(shard.passages.len() as u32);
        for p in &shard.passages {
            w.str(&p.passage_id);
            w.str(&p.doc_id);
            w.str(&p.text);
            w.u8(p.field.as_u8());
            w.u32(p.ordinal);
            w.u32(p.len);
        }
        write_file(&store_path(dir, shard.shard_id), &w.finish())?;
    }

    let analyzer = index.analyzer();
    let mut stopwords: Vec<&str> = analyzer.stopwords.iter().map(String::as_str).collect();
    stopwords.sort_unstable();
    let mut text = String::new();
    let _ = writeln!(text, "{META_MAGIC}");
    let _ = writeln!(text, "version {FORMAT_VERSION}");
    let _ = writeln!(text, "n {}", meta.num_passages);
    let _ = writeln!(text, "total_len {}", meta.total_len);
    let _ = writeln!(text, "avgdl {}", meta.avgdl);
    let _ = writeln!(text, "k1 {}", meta.k1);
    let _ = writeln!(text, "b {}", meta.b);
    let _ = writeln!(text, "num_shards {}", meta.num_shards);
    let _ = writeln!(text, "lowercase {}", analyzer.lowercase);
    let _ = writeln!(text, "stopwords {}", stopwords.join(","));
    let sum = hex(&checksum(text.as_bytes()));
    let _ = writeln!(text, "checksum {sum}");
    write_file(&dir.join("meta"), text.as_bytes())
}

struct MetaFile {
    num_passages: u64,
    total_len: u64,
    k1: f64,
    b: f64,
    num_shards: u32,
    analyzer: Analyzer,
}

fn parse_meta(path: &Path) -> Result<MetaFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut lines: Vec<(usize, &str, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        lines.push((i + 1, k, v));
    }
    if text.lines().next() != Some(META_MAGIC) {
        return Err(Error::parse(&ctx, 1, "not an index meta file"));
    }
    let get = |key: &str| -> Result<(usize, &str)> {
        lines
            .iter()
            .find(|(_, k, _)| *k == key)
            .map(|&(i, _, v)| (i, v))
            .ok_or_else(|| Error::parse(&ctx, 0, format!("missing `{key}`")))
    };
    fn num<T: std::str::FromStr>(ctx: &str, (line, v): (usize, &str)) -> Result<T> {
        v.parse().map_err(|_| Error::parse(ctx, line, format!("bad value `{v}`")))
    }

    let version: u32 = num(&ctx, get("version")?)?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let (_, sum) = get("checksum")?;
    let body_end = text
        .rfind("checksum ")
        .ok_or_else(|| Error::parse(&ctx, 0, "missing checksum"))?;
    if hex(&checksum(&text.as_bytes()[..body_end])) != sum {
        return Err(Error::Checksum(path.to_path_buf()));
    }

    let (_, stopwords) = get("stopwords")?;
    let analyzer = Analyzer {
        lowercase: num(&ctx, get("lowercase")?)?,
        stopwords: stopwords
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect::<HashSet<_>>(),
    };
    Ok(MetaFile {
        num_passages: num(&ctx, get("n")?)?,
        total_len: num(&ctx, get("total_len")?)?,
        k1: num(&ctx, get("k1")?)?,
        b: num(&ctx, get("b")?)?,
        num_shards: num(&ctx, get("num_shards")?)?,
        analyzer,
    })
}

/// Loads and verifies every file before constructing the index; nothing is
/// returned on any error.
pub fn load_index(dir: &Path) -> Result<Index> {
    let meta = parse_meta(&dir.join("meta"))?;
    let mut shards = Vec::with_capacity(meta.num_shards as usize);
    for sid in 0..meta.num_shards {
        let mut shard = IndexShard::new(sid);

        let path = store_path(dir, sid);
        let body = read_checked(&path, STORE_MAGIC, sid)?;
        let mut r = Reader { buf: &body, pos: 0, path: &path };
        let n = r.u32()?;
        for local in 0..n {
            let passage_id = r.str()?;
            let doc_id = r.str()?;
            let text = r.str()?;
            let field = Field::from_u8(r.u8()?).ok_or_else(|| r.corrupt("bad field tag"))?;
            let ordinal = r.u32()?;
            let len = r.u32()?;
            shard.by_id.insert(passage_id.clone(), local);
            shard.passages.push(StoredPassage {
                passage_id,
                doc_id,
                text,
                field,
                ordinal,
                len,
            });
        }
        r.done()?;

        let path = postings_path(dir, sid);
        let body = read_checked(&path, POSTINGS_MAGIC, sid)?;
        let mut r = Reader { buf: &body, pos: 0, path: &path };
        let terms = r.u32()?;
        for _ in 0..terms {
            let term = r.str()?;
            let len = r.u32()? as usize;
            let mut entries = Vec::with_capacity(len.min(body.len() / 8));
            for _ in 0..len {
                let local = r.u32()?;
                let tf = r.u32()?;
                if local >= n || tf == 0 || entries.last().is_some_and(|p: &Posting| p.local >= local) {
                    return Err(r.corrupt("invalid posting entry"));
                }
                entries.push(Posting { local, tf });
            }
            shard.postings.insert(term, PostingList { entries, df: 0 });
        }
        r.done()?;
        shards.push(shard);
    }

    let params = Bm25Params { k1: meta.k1, b: meta.b };
    let index = Index::finalize(shards, meta.analyzer, params)?;
    if index.meta().num_passages != meta.num_passages || index.meta().total_len != meta.total_len {
        return Err(Error::Corrupt {
            path: dir.join("meta"),
            message: "passage counts disagree with shard files".into(),
        });
    }
    Ok(index)
}
