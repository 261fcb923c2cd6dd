use std::path::Path;

use super::{DiscriminatorModel, EncoderModel, GeneratorModel, ModelSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LAMDL1";
const VERSION: u16 = 1;

/// Any of the three model kinds, as read back from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Generator(GeneratorModel),
    Discriminator(DiscriminatorModel),
    Encoder(EncoderModel),
}

impl AnyModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::Generator(m) => ModelSpec::Generator(m.spec().clone()),
            AnyModel::Discriminator(m) => ModelSpec::Discriminator(m.spec().clone()),
            AnyModel::Encoder(m) => ModelSpec::Encoder(m.spec().clone()),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            AnyModel::Generator(m) => m.network().flat_params(),
            AnyModel::Discriminator(m) => m.network().flat_params(),
            AnyModel::Encoder(m) => m.network().flat_params(),
        }
    }

    pub fn into_generator(self) -> Result<GeneratorModel> {
        match self {
            AnyModel::Generator(m) => Ok(m),
            other => Err(Error::Format(format!(
                "expected a generator checkpoint, found '{}'",
                other.spec()
            ))),
        }
    }

    pub fn into_discriminator(self) -> Result<DiscriminatorModel> {
        match self {
            AnyModel::Discriminator(m) => Ok(m),
            other => Err(Error::Format(format!(
                "expected a discriminator checkpoint, found '{}'",
                other.spec()
            ))),
        }
    }

    pub fn into_encoder(self) -> Result<EncoderModel> {
        match self {
            AnyModel::Encoder(m) => Ok(m),
            other => Err(Error::Format(format!(
                "expected an encoder checkpoint, found '{}'",
                other.spec()
            ))),
        }
    }
}

impl From<GeneratorModel> for AnyModel {
    fn from(m: GeneratorModel) -> Self {
        AnyModel::Generator(m)
    }
}

impl From<DiscriminatorModel> for AnyModel {
    fn from(m: DiscriminatorModel) -> Self {
        AnyModel::Discriminator(m)
    }
}

impl From<EncoderModel> for AnyModel {
    fn from(m: EncoderModel) -> Self {
        AnyModel::Encoder(m)
    }
}

/// Serializes a model:
/// magic, u16 version, u32 descriptor length, UTF-8 descriptor, u64
/// parameter count, f64 parameters, CRC32 of everything before it.
/// All integers and floats are little-endian.
pub fn encode_checkpoint(model: &AnyModel) -> Vec<u8> {
    let desc = model.spec().to_string();
    let params = model.flat_params();
    let mut out = Vec::with_capacity(6 + 2 + 4 + desc.len() + 8 + 8 * params.len() + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AnyModel> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(6)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let stored_crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let desc_len = u32::from_le_bytes(r.array()?) as usize;
    let desc = std::str::from_utf8(r.take(desc_len)?)
        .map_err(|_| Error::Format("checkpoint descriptor is not UTF-8".into()))?;
    let spec: ModelSpec = desc.parse()?;
    let count = u64::from_le_bytes(r.array()?);
    let count = usize::try_from(count)
        .ok()
        .filter(|c| c.checked_mul(8) == Some(body.len() - r.pos))
        .ok_or_else(|| Error::Format("checkpoint parameter count disagrees with size".into()))?;
    let params: Vec<f64> = r
        .take(count * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let wrong_count = |e: Error| match e {
        Error::Shape { .. } => Error::Format(format!(
            "checkpoint holds {count} parameters, which does not fit '{desc}'"
        )),
        other => other,
    };
    Ok(match spec {
        ModelSpec::Generator(s) => {
            AnyModel::Generator(GeneratorModel::from_parts(s, &params).map_err(wrong_count)?)
        }
        ModelSpec::Discriminator(s) => AnyModel::Discriminator(
            DiscriminatorModel::from_parts(s, &params).map_err(wrong_count)?,
        ),
        ModelSpec::Encoder(s) => {
            AnyModel::Encoder(EncoderModel::from_parts(s, &params).map_err(wrong_count)?)
        }
    })
}

pub fn save_checkpoint(path: &Path, model: &AnyModel) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DiscriminatorSpec, EncoderSpec, GeneratorSpec};

    fn generator() -> AnyModel {
        let spec = GeneratorSpec {
            latent_dim: 4,
            image_shape: [1, 16, 16],
            hidden_widths: vec![8],
            ..Default::default()
        };
        GeneratorModel::init(spec, 5).unwrap().into()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let models = [
            generator(),
            DiscriminatorModel::init(DiscriminatorSpec::default(), 1)
                .unwrap()
                .into(),
            EncoderModel::init(EncoderSpec::default(), 2)
                .unwrap()
                .into(),
        ];
        for m in models {
            let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
            let a: Vec<u64> = m.flat_params().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.flat_params().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(back.spec(), m.spec());
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&generator());
        assert_eq!(&bytes[..6], b"LAMDL1");
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 1);
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(
            std::str::from_utf8(&bytes[12..12 + n]).unwrap(),
            "generator arch=mlp latent=4 shape=1x16x16 hidden=8"
        );
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_checkpoint(&generator());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_and_bad_magic_are_detected() {
        let bytes = encode_checkpoint(&generator());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 9]).is_err());
        assert!(decode_checkpoint(&bytes[..3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn kind_mismatch_is_reported() {
        assert!(generator().into_encoder().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        let m = generator();
        save_checkpoint(&path, &m).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }
}
