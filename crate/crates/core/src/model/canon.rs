//! Canonical byte encoding used for hashing and signing.
//!
//! Layout rules: fields in declaration order, integers big-endian fixed
//! width, variable-length data prefixed with a u32 length, enum variants
//! prefixed with a u8 tag. The encoding is byte-exact so hashes and
//! signatures are stable across runs and platforms.

pub trait CanonicalEncode {
    fn encode(&self, out: &mut Vec<u8>);

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }
}

pub fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_i64(out: &mut Vec<u8>, v: i64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_bytes(out: &mut Vec<u8>, v: &[u8]) {
    put_u32(out, v.len() as u32);
    out.extend_from_slice(v);
}

pub fn put_str(out: &mut Vec<u8>, v: &str) {
    put_bytes(out, v.as_bytes());
}

pub fn put_slice<T: CanonicalEncode>(out: &mut Vec<u8>, items: &[T]) {
    put_u32(out, items.len() as u32);
    for item in items {
        item.encode(out);
    }
}

impl CanonicalEncode for u64 {
    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, *self);
    }
}

impl CanonicalEncode for String {
    fn encode(&self, out: &mut Vec<u8>) {
        put_str(out, self);
    }
}

impl<T: CanonicalEncode> CanonicalEncode for Option<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            None => put_u8(out, 0),
            Some(v) => {
                put_u8(out, 1);
                v.encode(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_big_endian_fixed_width() {
        let mut out = Vec::new();
        put_u64(&mut out, 1);
        assert_eq!(out, vec![0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn byte_fields_are_length_prefixed() {
        let mut out = Vec::new();
        put_str(&mut out, "ab");
        assert_eq!(out, vec![0, 0, 0, 2, b'a', b'b']);
    }
}
