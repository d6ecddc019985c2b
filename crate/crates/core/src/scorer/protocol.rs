//! Line-delimited JSON records exchanged with external scorers.
//!
//! One record per line, UTF-8. The harness sends [`Request`]s and reads
//! [`Response`]s:
//!
//! ```text
//! -> {"op":"hello","proto":1}
//! <- {"op":"hello","proto":1,"model":"gpt2","vocab_size":50257}
//! -> {"op":"vocab"}
//! <- {"op":"vocab","tokens":[{"id":0,"surface":"!","special":false},...],"more":true}
//! <- {"op":"vocab","tokens":[...]}                      (last chunk: "more" absent or false)
//! -> {"op":"score","id":7,"context":[464,3290,13],"target":262}
//! <- {"op":"score","id":7,"ln_p":-4.21}
//! -> {"op":"tokenize","id":8,"text":"a b"}
//! <- {"op":"tokenize","id":8,"ids":[64,275]}
//! <- {"op":"error","id":7,"reason":"..."}               (id may be null)
//! ```
//!
//! Log-probabilities on the wire are natural logs.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello {
        proto: u32,
    },
    Vocab {},
    Score {
        id: u64,
        context: Vec<u32>,
        target: u32,
    },
    Tokenize {
        id: u64,
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToken {
    pub id: u32,
    pub surface: String,
    #[serde(default)]
    pub special: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Response {
    Hello {
        proto: u32,
        model: String,
        vocab_size: usize,
    },
    Vocab {
        tokens: Vec<WireToken>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        more: bool,
    },
    Score {
        id: u64,
        ln_p: f64,
    },
    Tokenize {
        id: u64,
        ids: Vec<u32>,
    },
    Error {
        id: Option<u64>,
        reason: String,
    },
}

pub fn encode<T: Serialize>(record: &T) -> String {
    let mut line = serde_json::to_string(record).expect("wire records always serialize");
    line.push('\n');
    line
}
