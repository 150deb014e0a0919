//! Sectioned binary container.
//!
//! Layout: the magic `RPB1`, a u32 section count, one table entry per
//! section (4-byte tag, u64 offset, u64 length), then the payloads packed
//! back to back in table order. All integers are little-endian.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RPB1";
const TABLE_ENTRY: usize = 4 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SectionTag {
    Weights,
    Task,
    Model,
    Activations,
}

impl SectionTag {
    pub fn bytes(self) -> [u8; 4] {
        *self.as_str().as_bytes().first_chunk().expect("4 bytes")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SectionTag::Weights => "WGTS",
            SectionTag::Task => "TASK",
            SectionTag::Model => "FTMD",
            SectionTag::Activations => "ACTV",
        }
    }

    pub fn from_bytes(b: [u8; 4]) -> Result<Self> {
        match &b {
            b"WGTS" => Ok(SectionTag::Weights),
            b"TASK" => Ok(SectionTag::Task),
            b"FTMD" => Ok(SectionTag::Model),
            b"ACTV" => Ok(SectionTag::Activations),
            _ => Err(Error::Format(format!(
                "unknown section tag {:?}",
                String::from_utf8_lossy(&b)
            ))),
        }
    }
}

impl fmt::Display for SectionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub tag: SectionTag,
    pub payload: Vec<u8>,
}

impl Section {
    pub fn new(tag: SectionTag, payload: Vec<u8>) -> Self {
        Self { tag, payload }
    }
}

pub fn encode_container(sections: &[Section]) -> Result<Vec<u8>> {
    let count =
        u32::try_from(sections.len()).map_err(|_| Error::Format("too many sections".into()))?;
    let header = 4 + 4 + sections.len() * TABLE_ENTRY;
    let total = header + sections.iter().map(|s| s.payload.len()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    let mut offset = header as u64;
    for s in sections {
        out.extend_from_slice(&s.tag.bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(s.payload.len() as u64).to_le_bytes());
        offset += s.payload.len() as u64;
    }
    for s in sections {
        out.extend_from_slice(&s.payload);
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<Section>> {
    if bytes.len() < 8 || bytes[..4] != MAGIC {
        return Err(Error::Format("not a container: missing RPB1 magic".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header = count
        .checked_mul(TABLE_ENTRY)
        .and_then(|t| t.checked_add(8))
        .filter(|&h| h <= bytes.len())
        .ok_or_else(|| {
            Error::Format(format!("section table of {count} entries exceeds the file"))
        })?;
    let mut expected = header as u64;
    let mut sections = Vec::with_capacity(count);
    for i in 0..count {
        let e = &bytes[8 + i * TABLE_ENTRY..8 + (i + 1) * TABLE_ENTRY];
        let tag = SectionTag::from_bytes(e[..4].try_into().expect("4 bytes"))?;
        let offset = u64::from_le_bytes(e[4..12].try_into().expect("8 bytes"));
        let len = u64::from_le_bytes(e[12..20].try_into().expect("8 bytes"));
        let corrupt = |detail: String| Error::Corruption {
            tag: tag.to_string(),
            detail,
        };
        if offset != expected {
            return Err(corrupt(format!(
                "section starts at {offset}, expected {expected}"
            )));
        }
        let end = offset
            .checked_add(len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| {
                corrupt(format!(
                    "section of {len} bytes at {offset} runs past the end of a {}-byte file",
                    bytes.len()
                ))
            })?;
        sections.push(Section::new(
            tag,
            bytes[offset as usize..end as usize].to_vec(),
        ));
        expected = end;
    }
    if expected != bytes.len() as u64 {
        return Err(Error::Format(format!(
            "{} bytes follow the last section",
            bytes.len() as u64 - expected
        )));
    }
    Ok(sections)
}

pub fn write_container(path: impl AsRef<Path>, sections: &[Section]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_container(sections)?).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<Section>> {
    let path = path.as_ref();
    decode_container(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// The only section with `tag`; errors when absent or repeated.
pub fn single_section(sections: &[Section], tag: SectionTag) -> Result<&Section> {
    let mut found = sections.iter().filter(|s| s.tag == tag);
    match (found.next(), found.next()) {
        (Some(s), None) => Ok(s),
        (None, _) => Err(Error::Format(format!("container has no {tag} section"))),
        (Some(_), Some(_)) => Err(Error::Format(format!(
            "container has more than one {tag} section"
        ))),
    }
}
