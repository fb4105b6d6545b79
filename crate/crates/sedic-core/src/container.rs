//! The `.sdc` container: bit-exact serialization, parsing, and size
//! accounting.
//!
//! Wire layout, all integers little-endian, no padding:
//!
//! ```text
//! magic "SDC1" | version u8 | flags u8 | width u32 | height u32 |
//! n_sections u8 | n_sections x ( type u8 | payload_len u32 | payload )
//! ```
//!
//! Section types: REFERENCE (0x01, payload `codec_id u8 | bytes`),
//! OVERALL_TEXT (0x02, one text blob), OBJECT (0x03, detail text blob
//! followed by a mask blob, in decoding order), METADATA (0x04, skipped).
//! Types 0x05 and above are skipped for forward compatibility; type 0x00
//! is rejected. A second REFERENCE or OVERALL_TEXT section is an error.

use serde::Serialize;
use thiserror::Error;

use crate::mask_codec::{MaskBlob, MaskCodecError};
use crate::text_codec::{TextBlob, TextCodecError};

pub const MAGIC: [u8; 4] = *b"SDC1";
pub const VERSION: u8 = 1;
/// Fixed header size in bytes: magic + version + flags + dims + n_sections.
pub const HEADER_LEN: usize = 15;
/// Per-section framing overhead: type byte + payload length.
pub const SECTION_OVERHEAD: usize = 5;
/// Hard parse limit. Real containers are a few kilobytes; anything close
/// to this is hostile input.
pub const MAX_STREAM_LEN: usize = 64 << 20;

pub const SECTION_REFERENCE: u8 = 0x01;
pub const SECTION_OVERALL_TEXT: u8 = 0x02;
pub const SECTION_OBJECT: u8 = 0x03;
pub const SECTION_METADATA: u8 = 0x04;

pub const FLAG_REFERENCE: u8 = 0b0000_0001;
pub const FLAG_OVERALL_TEXT: u8 = 0b0000_0010;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("magic mismatch: not an SDC1 stream")]
    MagicMismatch,
    #[error("unsupported container version {found}")]
    UnsupportedVersion { found: u8 },
    #[error("stream truncated at offset {offset}")]
    Truncated { offset: usize },
    #[error("unknown section type {type_byte:#04x} at offset {offset}")]
    UnknownSectionType { type_byte: u8, offset: usize },
    #[error("duplicate section type {section_type:#04x}")]
    DuplicateSection { section_type: u8 },
    #[error("container invariant violated: {detail}")]
    InvariantViolation { detail: String },
    #[error("stream length {len} exceeds the {MAX_STREAM_LEN} byte parse limit")]
    TooLarge { len: usize },
    #[error("zero-area image dimensions")]
    ZeroArea,
    #[error("bad payload in section {section_type:#04x} (index {index}): {source}")]
    SectionPayload {
        section_type: u8,
        index: usize,
        source: SectionPayloadError,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SectionPayloadError {
    #[error(transparent)]
    Text(#[from] TextCodecError),
    #[error(transparent)]
    Mask(#[from] MaskCodecError),
    #[error("{extra} unexpected trailing bytes in section payload")]
    Trailing { extra: usize },
    #[error("reference payload missing codec id byte")]
    MissingCodecId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerHeader {
    pub magic: [u8; 4],
    pub version: u8,
    pub flags: u8,
    pub width: u32,
    pub height: u32,
    pub n_sections: u8,
}

/// Opaque reference-image bitstream tagged with the codec that wrote it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefPayload {
    pub codec_id: u8,
    pub bytes: Vec<u8>,
}

/// One transmitted object: its detail text and its mask. The object name
/// is encoder-side only and never appears here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectEntry {
    pub detail: TextBlob,
    pub mask: MaskBlob,
}

impl ObjectEntry {
    pub fn payload_len(&self) -> usize {
        self.detail.wire_len() + self.mask.wire_len()
    }
}

/// The parsed bitstream: header, optional reference payload, optional
/// overall text, and object entries in decoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticContainer {
    pub header: ContainerHeader,
    pub reference: Option<RefPayload>,
    pub overall_text: Option<TextBlob>,
    pub objects: Vec<ObjectEntry>,
}

impl SemanticContainer {
    /// Build a container with a header consistent with its contents.
    pub fn new(
        width: u32,
        height: u32,
        reference: Option<RefPayload>,
        overall_text: Option<TextBlob>,
        objects: Vec<ObjectEntry>,
    ) -> Self {
        let mut flags = 0u8;
        let mut n_sections = objects.len();
        if reference.is_some() {
            flags |= FLAG_REFERENCE;
            n_sections += 1;
        }
        if overall_text.is_some() {
            flags |= FLAG_OVERALL_TEXT;
            n_sections += 1;
        }
        SemanticContainer {
            header: ContainerHeader {
                magic: MAGIC,
                version: VERSION,
                flags,
                width,
                height,
                n_sections: n_sections as u8,
            },
            reference,
            overall_text,
            objects,
        }
    }

    fn check_invariants(&self) -> Result<(), ContainerError> {
        let fail = |detail: &str| {
            Err(ContainerError::InvariantViolation {
                detail: detail.to_string(),
            })
        };
        if self.header.magic != MAGIC {
            return fail("header magic is not SDC1");
        }
        if self.header.version != VERSION {
            return fail("header version is not 1");
        }
        if self.header.width == 0 || self.header.height == 0 {
            return fail("image dimensions must be at least 1x1");
        }
        if (self.header.flags & FLAG_REFERENCE != 0) != self.reference.is_some() {
            return fail("reference flag inconsistent with reference section");
        }
        if (self.header.flags & FLAG_OVERALL_TEXT != 0) != self.overall_text.is_some() {
            return fail("overall-text flag inconsistent with overall-text section");
        }
        let sections = self.section_count();
        if sections > 255 {
            return fail("more than 255 sections");
        }
        if usize::from(self.header.n_sections) != sections {
            return fail("n_sections does not match sections present");
        }
        Ok(())
    }

    pub fn section_count(&self) -> usize {
        usize::from(self.reference.is_some())
            + usize::from(self.overall_text.is_some())
            + self.objects.len()
    }

    /// Serialized byte length without actually serializing.
    pub fn wire_len(&self) -> usize {
        let mut len = HEADER_LEN;
        if let Some(r) = &self.reference {
            len += SECTION_OVERHEAD + 1 + r.bytes.len();
        }
        if let Some(t) = &self.overall_text {
            len += SECTION_OVERHEAD + t.wire_len();
        }
        for o in &self.objects {
            len += SECTION_OVERHEAD + o.payload_len();
        }
        len
    }
}

fn write_section(out: &mut Vec<u8>, section_type: u8, payload: &[u8]) {
    out.push(section_type);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

/// Serialize a container to the wire format. Fails with
/// [`ContainerError::InvariantViolation`] when the header disagrees with
/// the sections present.
pub fn serialize(container: &SemanticContainer) -> Result<Vec<u8>, ContainerError> {
    container.check_invariants()?;
    let mut out = Vec::with_capacity(container.wire_len());
    out.extend_from_slice(&container.header.magic);
    out.push(container.header.version);
    out.push(container.header.flags);
    out.extend_from_slice(&container.header.width.to_le_bytes());
    out.extend_from_slice(&container.header.height.to_le_bytes());
    out.push(container.header.n_sections);

    if let Some(r) = &container.reference {
        let mut payload = Vec::with_capacity(1 + r.bytes.len());
        payload.push(r.codec_id);
        payload.extend_from_slice(&r.bytes);
        write_section(&mut out, SECTION_REFERENCE, &payload);
    }
    if let Some(t) = &container.overall_text {
        write_section(&mut out, SECTION_OVERALL_TEXT, &t.to_bytes());
    }
    for o in &container.objects {
        let mut payload = Vec::with_capacity(o.payload_len());
        o.detail.write_to(&mut payload);
        o.mask.write_to(&mut payload);
        write_section(&mut out, SECTION_OBJECT, &payload);
    }
    Ok(out)
}

/// Parse arbitrary bytes into a container or a structured error. Never
/// reads past the end of `stream` and never allocates based on
/// unvalidated length fields.
///
/// METADATA sections and unknown types of 0x05 and above are skipped;
/// `n_sections` in the returned header counts only the sections kept.
pub fn parse(stream: &[u8]) -> Result<SemanticContainer, ContainerError> {
    if stream.len() > MAX_STREAM_LEN {
        return Err(ContainerError::TooLarge { len: stream.len() });
    }
    if stream.len() < 4 {
        return Err(ContainerError::Truncated {
            offset: stream.len(),
        });
    }
    if stream[0..4] != MAGIC {
        return Err(ContainerError::MagicMismatch);
    }
    if stream.len() < HEADER_LEN {
        return Err(ContainerError::Truncated {
            offset: stream.len(),
        });
    }
    let version = stream[4];
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion { found: version });
    }
    let flags = stream[5];
    let width = u32::from_le_bytes(stream[6..10].try_into().unwrap());
    let height = u32::from_le_bytes(stream[10..14].try_into().unwrap());
    let declared_sections = stream[14];

    let mut reference = None;
    let mut overall_text = None;
    let mut objects = Vec::new();
    let mut offset = HEADER_LEN;

    for index in 0..usize::from(declared_sections) {
        if stream.len() - offset < SECTION_OVERHEAD {
            return Err(ContainerError::Truncated { offset });
        }
        let section_type = stream[offset];
        let payload_len =
            u32::from_le_bytes(stream[offset + 1..offset + 5].try_into().unwrap()) as usize;
        let payload_start = offset + SECTION_OVERHEAD;
        if stream.len() - payload_start < payload_len {
            return Err(ContainerError::Truncated { offset: payload_start });
        }
        let payload = &stream[payload_start..payload_start + payload_len];
        offset = payload_start + payload_len;

        let wrap = |source: SectionPayloadError| ContainerError::SectionPayload {
            section_type,
            index,
            source,
        };
        match section_type {
            SECTION_REFERENCE => {
                if reference.is_some() {
                    return Err(ContainerError::DuplicateSection {
                        section_type: SECTION_REFERENCE,
                    });
                }
                let (&codec_id, bytes) = payload
                    .split_first()
                    .ok_or_else(|| wrap(SectionPayloadError::MissingCodecId))?;
                reference = Some(RefPayload {
                    codec_id,
                    bytes: bytes.to_vec(),
                });
            }
            SECTION_OVERALL_TEXT => {
                if overall_text.is_some() {
                    return Err(ContainerError::DuplicateSection {
                        section_type: SECTION_OVERALL_TEXT,
                    });
                }
                let (blob, used) =
                    TextBlob::read_from(payload).map_err(|e| wrap(e.into()))?;
                if used != payload.len() {
                    return Err(wrap(SectionPayloadError::Trailing {
                        extra: payload.len() - used,
                    }));
                }
                overall_text = Some(blob);
            }
            SECTION_OBJECT => {
                let (detail, used) =
                    TextBlob::read_from(payload).map_err(|e| wrap(e.into()))?;
                let (mask, mask_used) =
                    MaskBlob::read_from(&payload[used..]).map_err(|e| wrap(e.into()))?;
                if used + mask_used != payload.len() {
                    return Err(wrap(SectionPayloadError::Trailing {
                        extra: payload.len() - used - mask_used,
                    }));
                }
                objects.push(ObjectEntry { detail, mask });
            }
            SECTION_METADATA => {} // recognized but carried no further
            t if t >= 0x05 => {}   // forward compatibility: skip
            t => {
                return Err(ContainerError::UnknownSectionType {
                    type_byte: t,
                    offset: payload_start - SECTION_OVERHEAD,
                });
            }
        }
    }

    if offset != stream.len() {
        return Err(ContainerError::InvariantViolation {
            detail: format!("{} trailing bytes after last section", stream.len() - offset),
        });
    }
    if (flags & FLAG_REFERENCE != 0) != reference.is_some() {
        return Err(ContainerError::InvariantViolation {
            detail: "reference flag inconsistent with sections".into(),
        });
    }
    if (flags & FLAG_OVERALL_TEXT != 0) != overall_text.is_some() {
        return Err(ContainerError::InvariantViolation {
            detail: "overall-text flag inconsistent with sections".into(),
        });
    }
    if width == 0 || height == 0 {
        return Err(ContainerError::InvariantViolation {
            detail: "zero image dimension".into(),
        });
    }

    let kept =
        usize::from(reference.is_some()) + usize::from(overall_text.is_some()) + objects.len();
    Ok(SemanticContainer {
        header: ContainerHeader {
            magic: MAGIC,
            version,
            flags,
            width,
            height,
            n_sections: kept as u8,
        },
        reference,
        overall_text,
        objects,
    })
}

/// Bits per pixel for a stream of the given byte length.
pub fn bpp(stream_len_bytes: u64, width: u32, height: u32) -> Result<f64, ContainerError> {
    let pixels = u64::from(width) * u64::from(height);
    if pixels == 0 {
        return Err(ContainerError::ZeroArea);
    }
    Ok(stream_len_bytes as f64 * 8.0 / pixels as f64)
}

/// One row of the size breakdown; `bytes` includes the 5-byte section
/// framing so rows plus the fixed header cover the whole stream.
#[derive(Debug, Clone, Serialize)]
pub struct SizeRow {
    pub label: String,
    pub bytes: u64,
    pub bpp: f64,
    /// Fraction of all section bytes (a lone section reports 1.0).
    pub share: f64,
}

/// Per-section byte and bpp breakdown. `header_bytes + sum(rows.bytes)`
/// equals the serialized length, and `header_bpp + sum(rows.bpp)` equals
/// `total_bpp` up to float rounding.
#[derive(Debug, Clone, Serialize)]
pub struct SizeReport {
    pub width: u32,
    pub height: u32,
    pub header_bytes: u64,
    pub header_bpp: f64,
    pub rows: Vec<SizeRow>,
    pub total_bytes: u64,
    pub total_bpp: f64,
}

/// Size accounting for a valid container, without serializing it.
pub fn size_report(container: &SemanticContainer) -> Result<SizeReport, ContainerError> {
    container.check_invariants()?;
    let width = container.header.width;
    let height = container.header.height;

    let mut sections: Vec<(String, u64)> = Vec::new();
    if let Some(r) = &container.reference {
        sections.push((
            "reference".into(),
            (SECTION_OVERHEAD + 1 + r.bytes.len()) as u64,
        ));
    }
    if let Some(t) = &container.overall_text {
        sections.push((
            "overall_text".into(),
            (SECTION_OVERHEAD + t.wire_len()) as u64,
        ));
    }
    for (i, o) in container.objects.iter().enumerate() {
        sections.push((
            format!("object[{i}]"),
            (SECTION_OVERHEAD + o.payload_len()) as u64,
        ));
    }

    let section_total: u64 = sections.iter().map(|(_, b)| b).sum();
    let total_bytes = HEADER_LEN as u64 + section_total;
    let rows = sections
        .into_iter()
        .map(|(label, bytes)| {
            Ok(SizeRow {
                label,
                bytes,
                bpp: bpp(bytes, width, height)?,
                share: if section_total == 0 {
                    0.0
                } else {
                    bytes as f64 / section_total as f64
                },
            })
        })
        .collect::<Result<Vec<_>, ContainerError>>()?;

    Ok(SizeReport {
        width,
        height,
        header_bytes: HEADER_LEN as u64,
        header_bpp: bpp(HEADER_LEN as u64, width, height)?,
        rows,
        total_bytes,
        total_bpp: bpp(total_bytes, width, height)?,
    })
}
