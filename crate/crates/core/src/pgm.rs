//! Binary 8-bit greyscale PGM (`P5`) reading and writing, with header comments.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: u32,
    pub height: u32,
    /// Header comment lines without the leading `# `.
    pub comments: Vec<String>,
    pub data: Vec<u8>,
}

impl Pgm {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() + 64);
        out.extend_from_slice(b"P5\n");
        for c in &self.comments {
            writeln!(out, "# {c}").expect("write to vec");
        }
        writeln!(out, "{} {}\n255", self.width, self.height).expect("write to vec");
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut comments = Vec::new();
        let mut fields: Vec<String> = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(Error::Pgm("truncated header".into()));
            }
            if bytes[pos] == b'#' {
                let end = bytes[pos..].iter().position(|b| *b == b'\n').map_or(bytes.len(), |e| pos + e);
                let line = String::from_utf8_lossy(&bytes[pos + 1..end]);
                comments.push(line.trim().to_string());
                pos = end;
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::Pgm(format!("unsupported magic `{}`", fields[0])));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| Error::Pgm(format!("bad header field `{s}`")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Pgm(format!("only maxval 255 is supported, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let len = width as usize * height as usize;
        if bytes.len() < pos + len {
            return Err(Error::Pgm(format!("expected {len} raster bytes, got {}", bytes.len().saturating_sub(pos))));
        }
        Ok(Pgm { width, height, comments, data: bytes[pos..pos + len].to_vec() })
    }
}

pub fn write(path: &Path, pgm: &Pgm) -> Result<()> {
    fs::write(path, pgm.encode())?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Pgm> {
    Pgm::decode(&fs::read(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?)
}
