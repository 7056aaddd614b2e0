//! Portable bitmap (P1 ASCII / P4 binary) skin masks. A set bit is skin.

use std::path::Path;

use super::SkinMask;
use crate::error::{Error, Result};

pub fn read_pbm(path: impl AsRef<Path>) -> Result<SkinMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pbm(&bytes)
}

pub fn write_pbm_p4(mask: &SkinMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P4\n{} {}\n", mask.width(), mask.height()).into_bytes();
    let stride = mask.width().div_ceil(8);
    for y in 0..mask.height() {
        let mut row = vec![0u8; stride];
        for x in 0..mask.width() {
            if mask.get(x, y) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn bad(message: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        message: format!("PBM: {}", message.into()),
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| bad("truncated header"))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse().map_err(|_| bad(format!("bad size field '{t}'")))
    }
}

pub(crate) fn parse_pbm(data: &[u8]) -> Result<SkinMask> {
    let mut cur = Cursor { data, pos: 0 };
    let magic = cur.token()?.to_string();
    let width = cur.number()?;
    let height = cur.number()?;
    let mut bits = Vec::with_capacity(width * height);
    match magic.as_str() {
        "P1" => {
            while bits.len() < width * height {
                cur.skip_space_and_comments();
                match data.get(cur.pos) {
                    Some(b'0') => bits.push(false),
                    Some(b'1') => bits.push(true),
                    Some(c) => return Err(bad(format!("unexpected byte {c:#x} in raster"))),
                    None => return Err(bad("raster truncated")),
                }
                cur.pos += 1;
            }
        }
        "P4" => {
            // exactly one whitespace byte separates the header from the raster
            cur.pos += 1;
            let stride = width.div_ceil(8);
            let raster = data
                .get(cur.pos..cur.pos + stride * height)
                .ok_or_else(|| bad("raster truncated"))?;
            for row in raster.chunks(stride.max(1)).take(height) {
                for x in 0..width {
                    bits.push(row[x / 8] & (0x80 >> (x % 8)) != 0);
                }
            }
        }
        other => return Err(bad(format!("unsupported magic '{other}'"))),
    }
    SkinMask::new(width, height, bits).ok_or_else(|| bad("size mismatch"))
}
