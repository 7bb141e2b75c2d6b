//! Messages exchanged over the classical channel.

use serde::{Deserialize, Serialize};

use crate::auth::AuthTag;
use crate::timebase::WirePayload;

use super::bepfile::BepFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    /// Alice → Bob: "my time is t1".
    TimeStamp,
    /// Bob → Alice: "I received it at t1* and my time is now t2*".
    Response,
    /// Alice → Bob: "your response arrived at t2".
    Share,
}

/// Field of a [`SyncMessage`] by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeField {
    T1,
    T1Star,
    T2Star,
    T2,
}

impl TimeField {
    pub fn carried_by(self) -> MessageKind {
        match self {
            TimeField::T1 => MessageKind::TimeStamp,
            TimeField::T1Star | TimeField::T2Star => MessageKind::Response,
            TimeField::T2 => MessageKind::Share,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncMessage {
    pub kind: MessageKind,
    pub t1: Option<f64>,
    pub t1_star: Option<f64>,
    pub t2_star: Option<f64>,
    pub t2: Option<f64>,
    pub tag: Option<AuthTag>,
}

impl SyncMessage {
    fn empty(kind: MessageKind) -> Self {
        Self {
            kind,
            t1: None,
            t1_star: None,
            t2_star: None,
            t2: None,
            tag: None,
        }
    }

    pub fn time_stamp(t1: f64) -> Self {
        Self {
            t1: Some(t1),
            ..Self::empty(MessageKind::TimeStamp)
        }
    }

    pub fn response(t1_star: f64, t2_star: f64) -> Self {
        Self {
            t1_star: Some(t1_star),
            t2_star: Some(t2_star),
            ..Self::empty(MessageKind::Response)
        }
    }

    pub fn share(t2: f64) -> Self {
        Self {
            t2: Some(t2),
            ..Self::empty(MessageKind::Share)
        }
    }

    pub fn field(&self, field: TimeField) -> Option<f64> {
        match field {
            TimeField::T1 => self.t1,
            TimeField::T1Star => self.t1_star,
            TimeField::T2Star => self.t2_star,
            TimeField::T2 => self.t2,
        }
    }

    pub fn field_mut(&mut self, field: TimeField) -> &mut Option<f64> {
        match field {
            TimeField::T1 => &mut self.t1,
            TimeField::T1Star => &mut self.t1_star,
            TimeField::T2Star => &mut self.t2_star,
            TimeField::T2 => &mut self.t2,
        }
    }

    /// The authenticated content: kind plus exact bit patterns of every
    /// field. The tag itself is excluded.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let kind = match self.kind {
            MessageKind::TimeStamp => "TimeStamp",
            MessageKind::Response => "Response",
            MessageKind::Share => "Share",
        };
        let field = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{:016x}", x.to_bits()));
        format!(
            "sync;{kind};t1={};t1*={};t2*={};t2={}",
            field(self.t1),
            field(self.t1_star),
            field(self.t2_star),
            field(self.t2)
        )
        .into_bytes()
    }
}

/// A BEP file in transit with its optional tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedFile {
    pub file: BepFile,
    pub tag: Option<AuthTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Sync(SyncMessage),
    File(Box<SignedFile>),
}

impl WirePayload for WireMessage {
    fn wire_bytes(&self) -> Vec<u8> {
        match self {
            WireMessage::Sync(m) => {
                let mut bytes = m.signed_bytes();
                if let Some(tag) = &m.tag {
                    bytes.extend_from_slice(&tag.to_bytes());
                }
                bytes
            }
            WireMessage::File(f) => f.file.to_text(f.tag.as_ref()).into_bytes(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_populate_fields_by_kind() {
        let m = SyncMessage::response(1.0, 2.0);
        assert_eq!(m.kind, MessageKind::Response);
        assert_eq!(m.field(TimeField::T1Star), Some(1.0));
        assert_eq!(m.field(TimeField::T2Star), Some(2.0));
        assert_eq!(m.field(TimeField::T1), None);
        assert_eq!(TimeField::T2.carried_by(), MessageKind::Share);
    }

    #[test]
    fn signed_bytes_see_every_bit() {
        let a = SyncMessage::time_stamp(0.1);
        let b = SyncMessage::time_stamp(f64::from_bits(0.1f64.to_bits() + 1));
        assert_ne!(a.signed_bytes(), b.signed_bytes());
    }
}
