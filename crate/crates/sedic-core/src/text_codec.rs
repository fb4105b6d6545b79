//! Lossless text compression with canonical Huffman codes over the byte
//! alphabet.
//!
//! Every text section carries its own code table, so sections stay
//! independently decodable. Tables serialize as (symbol, code length)
//! pairs only; codes are reassigned canonically on both sides. Code
//! lengths are capped at 15 bits, falling back to package-merge when the
//! optimal tree is deeper.
//!
//! Wire layout of a blob: `decoded_len u32 | n_symbols u16 |
//! n_symbols x (symbol u8, code_len u8) | bitstream` with bits packed
//! MSB-first and zero-padded to a byte boundary. A blob is
//! self-delimiting: decoding `decoded_len` symbols determines where the
//! bitstream ends.

use thiserror::Error;

pub const MAX_CODE_LEN: u8 = 15;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextCodecError {
    /// Table is invalid or the prefix walk fell off the code tree.
    #[error("corrupt bitstream: {0}")]
    CorruptBitstream(&'static str),
    /// Bitstream ended before `decoded_len` symbols were produced.
    #[error("length mismatch: bitstream exhausted before {expected} symbols")]
    LengthMismatch { expected: u32 },
}

/// Canonical code table: symbols strictly ascending, lengths 1..=15,
/// Kraft sum at most one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeTable {
    entries: Vec<(u8, u8)>,
}

impl CodeTable {
    pub fn from_entries(entries: Vec<(u8, u8)>) -> Result<Self, TextCodecError> {
        let table = Self { entries };
        table.validate()?;
        Ok(table)
    }

    pub fn entries(&self) -> &[(u8, u8)] {
        &self.entries
    }

    pub fn n_symbols(&self) -> usize {
        self.entries.len()
    }

    fn validate(&self) -> Result<(), TextCodecError> {
        if self.entries.len() > 256 {
            return Err(TextCodecError::CorruptBitstream("more than 256 symbols"));
        }
        let mut kraft: u64 = 0;
        for (i, &(sym, len)) in self.entries.iter().enumerate() {
            if len == 0 || len > MAX_CODE_LEN {
                return Err(TextCodecError::CorruptBitstream("code length out of range"));
            }
            if i > 0 && self.entries[i - 1].0 >= sym {
                return Err(TextCodecError::CorruptBitstream("symbols not ascending"));
            }
            kraft += 1u64 << (MAX_CODE_LEN - len);
        }
        if kraft > 1u64 << MAX_CODE_LEN {
            return Err(TextCodecError::CorruptBitstream("Kraft inequality violated"));
        }
        Ok(())
    }

    /// Canonical (code, length) per symbol, assigned by (length asc,
    /// symbol asc).
    fn assign_codes(&self) -> Vec<(u8, u16, u8)> {
        let mut order: Vec<(u8, u8)> = self.entries.clone();
        order.sort_by_key(|&(sym, len)| (len, sym));
        let mut codes = Vec::with_capacity(order.len());
        let mut code: u16 = 0;
        let mut prev_len: u8 = order.first().map_or(1, |&(_, len)| len);
        for &(sym, len) in &order {
            code <<= len - prev_len;
            prev_len = len;
            codes.push((sym, code, len));
            code += 1;
        }
        codes
    }
}

/// Entropy-coded text plus the table needed to decode it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextBlob {
    pub decoded_len: u32,
    pub table: CodeTable,
    pub bits: Vec<u8>,
}

impl TextBlob {
    /// Serialized byte length.
    pub fn wire_len(&self) -> usize {
        4 + 2 + 2 * self.table.n_symbols() + self.bits.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.decoded_len.to_le_bytes());
        out.extend_from_slice(&(self.table.n_symbols() as u16).to_le_bytes());
        for &(sym, len) in self.table.entries() {
            out.push(sym);
            out.push(len);
        }
        out.extend_from_slice(&self.bits);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_to(&mut out);
        out
    }

    /// Parse a blob from the front of `data`, returning it together with
    /// the number of bytes consumed. Validates the table, that the
    /// bitstream holds exactly `decoded_len` symbols, and that padding
    /// bits are zero.
    pub fn read_from(data: &[u8]) -> Result<(Self, usize), TextCodecError> {
        if data.len() < 6 {
            return Err(TextCodecError::CorruptBitstream("blob header truncated"));
        }
        let decoded_len = u32::from_le_bytes(data[0..4].try_into().unwrap());
        let n_symbols = u16::from_le_bytes(data[4..6].try_into().unwrap()) as usize;
        let table_end = 6 + 2 * n_symbols;
        if data.len() < table_end {
            return Err(TextCodecError::CorruptBitstream("table truncated"));
        }
        let entries = (0..n_symbols)
            .map(|i| (data[6 + 2 * i], data[7 + 2 * i]))
            .collect();
        let table = CodeTable::from_entries(entries)?;
        let payload = &data[table_end..];

        let bit_len = walk_bits(&table, decoded_len, payload)?;
        let byte_len = bit_len.div_ceil(8) as usize;
        // Zero padding up to the byte boundary.
        if bit_len % 8 != 0 {
            let pad_mask = 0xffu8 >> (bit_len % 8);
            if payload[byte_len - 1] & pad_mask != 0 {
                return Err(TextCodecError::CorruptBitstream("nonzero padding bits"));
            }
        }
        let blob = TextBlob {
            decoded_len,
            table,
            bits: payload[..byte_len].to_vec(),
        };
        Ok((blob, table_end + byte_len))
    }
}

/// Number of bits consumed by decoding exactly `count` symbols, without
/// materializing the output.
fn walk_bits(table: &CodeTable, count: u32, payload: &[u8]) -> Result<u64, TextCodecError> {
    let mut sink = |_sym: u8| {};
    decode_symbols(table, count, payload, &mut sink)
}

struct CanonicalDecoder {
    // Per length 1..=15: count of codes, value of the first code, and the
    // index of its symbol in canonical order.
    count: [u32; 16],
    first_code: [u32; 16],
    offset: [u32; 16],
    symbols: Vec<u8>,
}

impl CanonicalDecoder {
    fn new(table: &CodeTable) -> Self {
        let codes = table.assign_codes();
        let mut count = [0u32; 16];
        for &(_, _, len) in &codes {
            count[len as usize] += 1;
        }
        let mut first_code = [0u32; 16];
        let mut offset = [0u32; 16];
        let mut code: u32 = 0;
        let mut index: u32 = 0;
        for len in 1..=MAX_CODE_LEN as usize {
            code <<= 1;
            first_code[len] = code;
            offset[len] = index;
            code += count[len];
            index += count[len];
        }
        let symbols = codes.iter().map(|&(sym, _, _)| sym).collect();
        Self {
            count,
            first_code,
            offset,
            symbols,
        }
    }
}

fn decode_symbols(
    table: &CodeTable,
    count: u32,
    payload: &[u8],
    emit: &mut dyn FnMut(u8),
) -> Result<u64, TextCodecError> {
    if count == 0 {
        return Ok(0);
    }
    if table.n_symbols() == 0 {
        return Err(TextCodecError::CorruptBitstream("empty table"));
    }
    let avail_bits = payload.len() as u64 * 8;
    if u64::from(count) > avail_bits {
        return Err(TextCodecError::LengthMismatch { expected: count });
    }
    let decoder = CanonicalDecoder::new(table);
    let mut bit_pos: u64 = 0;
    for _ in 0..count {
        let mut acc: u32 = 0;
        let mut len = 0usize;
        loop {
            if bit_pos >= avail_bits {
                return Err(TextCodecError::LengthMismatch { expected: count });
            }
            let byte = payload[(bit_pos / 8) as usize];
            let bit = (byte >> (7 - (bit_pos % 8))) & 1;
            bit_pos += 1;
            acc = (acc << 1) | u32::from(bit);
            len += 1;
            if len > MAX_CODE_LEN as usize {
                return Err(TextCodecError::CorruptBitstream("prefix walk fell off table"));
            }
            if decoder.count[len] > 0 && acc >= decoder.first_code[len] {
                let idx = acc - decoder.first_code[len];
                if idx < decoder.count[len] {
                    emit(decoder.symbols[(decoder.offset[len] + idx) as usize]);
                    break;
                }
            }
        }
    }
    Ok(bit_pos)
}

/// Optimal code lengths for the given histogram, capped at
/// [`MAX_CODE_LEN`]. Pure function of the histogram, so identical
/// histograms always yield identical tables.
fn code_lengths(histogram: &[u64; 256]) -> Vec<(u8, u8)> {
    let symbols: Vec<(u8, u64)> = histogram
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0)
        .map(|(s, &f)| (s as u8, f))
        .collect();
    match symbols.len() {
        0 => return Vec::new(),
        1 => return vec![(symbols[0].0, 1)],
        _ => {}
    }

    let lengths = huffman_lengths(&symbols);
    let lengths = if lengths.iter().any(|&(_, l)| l > MAX_CODE_LEN) {
        package_merge(&symbols, MAX_CODE_LEN as usize)
    } else {
        lengths
    };
    let mut out = lengths;
    out.sort_by_key(|&(sym, _)| sym);
    out
}

/// Classic two-queue Huffman over symbols sorted by (freq, symbol).
fn huffman_lengths(symbols: &[(u8, u64)]) -> Vec<(u8, u8)> {
    #[derive(Clone, Copy)]
    struct Node {
        weight: u64,
        left: Option<usize>,
        right: Option<usize>,
    }
    let mut order: Vec<(u8, u64)> = symbols.to_vec();
    order.sort_by_key(|&(sym, f)| (f, sym));

    let mut nodes: Vec<Node> = order
        .iter()
        .map(|&(_, f)| Node {
            weight: f,
            left: None,
            right: None,
        })
        .collect();
    let mut leaves: std::collections::VecDeque<usize> = (0..nodes.len()).collect();
    let mut internal: std::collections::VecDeque<usize> = std::collections::VecDeque::new();

    let pop_min = |leaves: &mut std::collections::VecDeque<usize>,
                       internal: &mut std::collections::VecDeque<usize>,
                       nodes: &Vec<Node>| {
        match (leaves.front(), internal.front()) {
            (Some(&l), Some(&i)) => {
                if nodes[l].weight <= nodes[i].weight {
                    leaves.pop_front().unwrap()
                } else {
                    internal.pop_front().unwrap()
                }
            }
            (Some(_), None) => leaves.pop_front().unwrap(),
            (None, Some(_)) => internal.pop_front().unwrap(),
            (None, None) => unreachable!("queues exhausted"),
        }
    };

    while leaves.len() + internal.len() > 1 {
        let a = pop_min(&mut leaves, &mut internal, &nodes);
        let b = pop_min(&mut leaves, &mut internal, &nodes);
        let merged = Node {
            weight: nodes[a].weight + nodes[b].weight,
            left: Some(a),
            right: Some(b),
        };
        nodes.push(merged);
        internal.push_back(nodes.len() - 1);
    }
    let root = internal.pop_front().expect("tree has a root");

    // Depth of each leaf by iterative traversal.
    let mut depths = vec![0u8; order.len()];
    let mut stack = vec![(root, 0u8)];
    while let Some((idx, depth)) = stack.pop() {
        match (nodes[idx].left, nodes[idx].right) {
            (Some(l), Some(r)) => {
                stack.push((l, depth + 1));
                stack.push((r, depth + 1));
            }
            _ => depths[idx] = depth,
        }
    }
    order
        .iter()
        .zip(&depths)
        .map(|(&(sym, _), &d)| (sym, d))
        .collect()
}

/// Package-merge: optimal code lengths under a maximum length bound.
fn package_merge(symbols: &[(u8, u64)], max_len: usize) -> Vec<(u8, u8)> {
    let n = symbols.len();
    assert!(n >= 2 && n <= (1 << max_len), "bound must be feasible");

    let mut order: Vec<(u8, u64)> = symbols.to_vec();
    order.sort_by_key(|&(sym, f)| (f, sym));

    // Item = (weight, per-symbol leaf multiplicity).
    type Item = (u64, Vec<u16>);
    let leaf = |i: usize, order: &[(u8, u64)]| -> Item {
        let mut counts = vec![0u16; n];
        counts[i] = 1;
        (order[i].1, counts)
    };
    let leaves: Vec<Item> = (0..n).map(|i| leaf(i, &order)).collect();

    let mut current: Vec<Item> = leaves.clone();
    for _ in 1..max_len {
        // Package the current list pairwise, then merge with fresh leaves.
        let mut packages: Vec<Item> = Vec::with_capacity(current.len() / 2);
        for pair in current.chunks_exact(2) {
            let weight = pair[0].0 + pair[1].0;
            let counts = pair[0]
                .1
                .iter()
                .zip(&pair[1].1)
                .map(|(a, b)| a + b)
                .collect();
            packages.push((weight, counts));
        }
        let mut merged = Vec::with_capacity(leaves.len() + packages.len());
        let (mut i, mut j) = (0, 0);
        while i < leaves.len() || j < packages.len() {
            let take_leaf = match (leaves.get(i), packages.get(j)) {
                (Some(l), Some(p)) => l.0 <= p.0,
                (Some(_), None) => true,
                _ => false,
            };
            if take_leaf {
                merged.push(leaves[i].clone());
                i += 1;
            } else {
                merged.push(packages[j].clone());
                j += 1;
            }
        }
        current = merged;
    }

    let mut lengths = vec![0u16; n];
    for item in current.iter().take(2 * n - 2) {
        for (i, &c) in item.1.iter().enumerate() {
            lengths[i] += c;
        }
    }
    order
        .iter()
        .zip(&lengths)
        .map(|(&(sym, _), &l)| (sym, l as u8))
        .collect()
}

/// Compress `text` into a self-contained blob. Round-trips losslessly;
/// empty input yields an empty table and no bits.
pub fn text_encode(text: &[u8]) -> TextBlob {
    let mut histogram = [0u64; 256];
    for &b in text {
        histogram[b as usize] += 1;
    }
    let table = CodeTable {
        entries: code_lengths(&histogram),
    };
    let codes = table.assign_codes();
    let mut lookup: [(u16, u8); 256] = [(0, 0); 256];
    for &(sym, code, len) in &codes {
        lookup[sym as usize] = (code, len);
    }

    let mut bits = Vec::new();
    let mut acc: u32 = 0;
    let mut acc_len: u32 = 0;
    for &b in text {
        let (code, len) = lookup[b as usize];
        acc = (acc << len) | u32::from(code);
        acc_len += u32::from(len);
        while acc_len >= 8 {
            acc_len -= 8;
            bits.push((acc >> acc_len) as u8);
        }
    }
    if acc_len > 0 {
        bits.push((acc << (8 - acc_len)) as u8);
    }
    TextBlob {
        decoded_len: text.len() as u32,
        table,
        bits,
    }
}

/// Recover the exact original bytes from a blob.
pub fn text_decode(blob: &TextBlob) -> Result<Vec<u8>, TextCodecError> {
    let mut out = Vec::with_capacity(blob.decoded_len as usize);
    let mut emit = |sym: u8| out.push(sym);
    decode_symbols(&blob.table, blob.decoded_len, &blob.bits, &mut emit)?;
    Ok(out)
}

/// Exact serialized size in bits of the blob `text` would produce,
/// by encode-and-measure.
pub fn estimate_text_bits(text: &[u8]) -> u64 {
    text_encode(text).wire_len() as u64 * 8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input() {
        let blob = text_encode(b"");
        assert_eq!(blob.decoded_len, 0);
        assert_eq!(blob.table.n_symbols(), 0);
        assert!(blob.bits.is_empty());
        assert_eq!(text_decode(&blob).unwrap(), b"");
        assert_eq!(estimate_text_bits(b""), 48);
    }

    #[test]
    fn single_symbol_uses_one_bit_code() {
        let text = vec![b'a'; 100];
        let blob = text_encode(&text);
        assert_eq!(blob.table.entries(), &[(b'a', 1)]);
        // 100 one-bit codes, all zero, in 13 bytes.
        assert_eq!(blob.bits.len(), 13);
        assert!(blob.bits.iter().all(|&b| b == 0));
        assert_eq!(text_decode(&blob).unwrap(), text);
        // 4 + 2 + 2 table bytes plus 13 payload bytes.
        assert_eq!(estimate_text_bits(&text), (4 + 2 + 2 + 13) * 8);
    }

    #[test]
    fn utf8_sentence_roundtrip() {
        let text = "πλάσμα — semantic masks convey what text cannot".as_bytes();
        let blob = text_encode(text);
        assert_eq!(text_decode(&blob).unwrap(), text);
        let wire = blob.to_bytes();
        let (back, used) = TextBlob::read_from(&wire).unwrap();
        assert_eq!(used, wire.len());
        assert_eq!(back, blob);
    }

    #[test]
    fn length_mismatch_detected() {
        // Claim more symbols than the bitstream can possibly hold.
        let blob = text_encode(b"aaa");
        let tampered = TextBlob {
            decoded_len: 100,
            ..blob
        };
        assert!(matches!(
            text_decode(&tampered),
            Err(TextCodecError::LengthMismatch { expected: 100 })
        ));

        // Exhaustion mid-walk: a 3-bit code, one byte of bits, and a claim
        // of three symbols (the third would need bits 7..9).
        let table = CodeTable::from_entries(vec![(b'x', 3)]).unwrap();
        let blob = TextBlob {
            decoded_len: 3,
            table,
            bits: vec![0x00],
        };
        assert!(matches!(
            text_decode(&blob),
            Err(TextCodecError::LengthMismatch { expected: 3 })
        ));
    }

    #[test]
    fn kraft_violation_rejected_at_construction() {
        // Three 1-bit codes: kraft = 1.5.
        let err = CodeTable::from_entries(vec![(b'a', 1), (b'b', 1), (b'c', 1)]).unwrap_err();
        assert!(matches!(err, TextCodecError::CorruptBitstream(_)));
    }

    #[test]
    fn nonascending_symbols_rejected() {
        assert!(CodeTable::from_entries(vec![(b'b', 2), (b'a', 2)]).is_err());
        assert!(CodeTable::from_entries(vec![(b'a', 2), (b'a', 2)]).is_err());
    }

    #[test]
    fn dead_end_prefix_is_corrupt() {
        // Single symbol table, but set bits walk into the unassigned branch
        // and never match any code length.
        let table = CodeTable::from_entries(vec![(b'x', 1)]).unwrap();
        let blob = TextBlob {
            decoded_len: 1,
            table,
            bits: vec![0xff, 0xff],
        };
        assert!(matches!(
            text_decode(&blob),
            Err(TextCodecError::CorruptBitstream(_))
        ));
    }

    #[test]
    fn nonzero_padding_rejected_on_read() {
        let blob = text_encode(b"abcabc");
        let mut wire = blob.to_bytes();
        let last = wire.len() - 1;
        wire[last] |= 0x01;
        // Either the pad check fires or the walk falls off; both are corrupt.
        assert!(TextBlob::read_from(&wire).is_err());
    }

    #[test]
    fn fibonacci_histogram_hits_length_cap() {
        // Fibonacci frequencies force a maximally skewed Huffman tree;
        // with 20 symbols the unconstrained depth exceeds 15.
        let mut text = Vec::new();
        let (mut a, mut b) = (1u64, 1u64);
        for sym in 0..20u8 {
            for _ in 0..a {
                text.push(sym);
            }
            let next = a + b;
            a = b;
            b = next;
        }
        let blob = text_encode(&text);
        let max_len = blob.table.entries().iter().map(|&(_, l)| l).max().unwrap();
        assert!(max_len <= MAX_CODE_LEN);
        assert_eq!(text_decode(&blob).unwrap(), text);
    }

    #[test]
    fn canonical_tables_depend_only_on_histogram() {
        let a = text_encode(b"the cat sat on the mat");
        let mut shuffled = b"the cat sat on the mat".to_vec();
        shuffled.reverse();
        let b = text_encode(&shuffled);
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn estimate_is_monotone_under_repetition() {
        let samples: &[&[u8]] = &[b"a", b"hello world", b"zx", &[0, 1, 2, 3, 255]];
        for &t in samples {
            let doubled: Vec<u8> = t.iter().chain(t.iter()).copied().collect();
            assert!(estimate_text_bits(t) <= estimate_text_bits(&doubled));
        }
    }

    proptest! {
        #[test]
        fn roundtrip_random(text in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let blob = text_encode(&text);
            prop_assert_eq!(text_decode(&blob).unwrap(), text.clone());
            let wire = blob.to_bytes();
            let (back, used) = TextBlob::read_from(&wire).unwrap();
            prop_assert_eq!(used, wire.len());
            prop_assert_eq!(text_decode(&back).unwrap(), text);
        }

        #[test]
        fn read_from_never_panics(data in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = TextBlob::read_from(&data);
        }
    }
}
