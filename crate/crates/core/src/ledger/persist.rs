//! Ledger file format.
//!
//! A sequence of records, one per block:
//!
//! ```text
//! record_len   u64 BE   (bytes that follow in this record)
//! header       canonical header encoding
//! tx_count     u32 BE
//! tx*          canonical tx encoding | signature (64)
//! end_count    u32 BE
//! endorsement* principal encoding | signature (64)
//! ```

use std::io::{self, Write};

use thiserror::Error;

use super::block::Block;
use super::codec::{DecodeError, Reader, Writer};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("ledger file is empty")]
    Empty,
    #[error("truncated record at offset {offset}")]
    Truncated { offset: usize },
    #[error("malformed block at offset {offset}: {source}")]
    Malformed {
        offset: usize,
        #[source]
        source: DecodeError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_ledger(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for b in blocks {
        let mut w = Writer::new();
        b.encode_into(&mut w).expect("committed blocks always encode");
        let rec = w.into_bytes();
        out.extend_from_slice(&(rec.len() as u64).to_be_bytes());
        out.extend_from_slice(&rec);
    }
    out
}

pub fn write_ledger(blocks: &[Block], mut out: impl Write) -> io::Result<()> {
    out.write_all(&encode_ledger(blocks))
}

pub fn decode_ledger(bytes: &[u8]) -> Result<Vec<Block>, PersistError> {
    if bytes.is_empty() {
        return Err(PersistError::Empty);
    }
    let mut r = Reader::new(bytes);
    let mut blocks = Vec::new();
    while r.remaining() > 0 {
        let offset = r.position();
        let len = r.u64().map_err(|_| PersistError::Truncated { offset })?;
        let len = usize::try_from(len).map_err(|_| PersistError::Truncated { offset })?;
        let rec = r.take(len).map_err(|_| PersistError::Truncated { offset })?;
        let mut rr = Reader::new(rec);
        let block = Block::decode(&mut rr)
            .and_then(|b| rr.finish().map(|_| b))
            .map_err(|source| PersistError::Malformed { offset, source })?;
        blocks.push(block);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(decode_ledger(&[]), Err(PersistError::Empty)));
    }

    #[test]
    fn truncated_length() {
        assert!(matches!(
            decode_ledger(&[0, 0, 0]),
            Err(PersistError::Truncated { offset: 0 })
        ));
        assert!(matches!(
            decode_ledger(&[0, 0, 0, 0, 0, 0, 0, 9, 1]),
            Err(PersistError::Truncated { offset: 0 })
        ));
    }
}
