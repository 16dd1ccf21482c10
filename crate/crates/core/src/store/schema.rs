use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    U64Id,
    U32Enum,
    I64Timestamp,
    F32,
    F32Vec,
    U16,
}

impl FieldKind {
    fn tag(self) -> &'static str {
        match self {
            FieldKind::U64Id => "u64_id",
            FieldKind::U32Enum => "u32_enum",
            FieldKind::I64Timestamp => "i64_timestamp",
            FieldKind::F32 => "f32",
            FieldKind::F32Vec => "f32_vec",
            FieldKind::U16 => "u16",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    /// Length of an `f32_vec` field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub nullable: bool,
}

impl FieldSpec {
    pub fn new(name: &str, kind: FieldKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            dim: None,
            nullable: false,
        }
    }

    pub fn nullable(mut self) -> Self {
        self.nullable = true;
        self
    }

    pub fn vec(name: &str, dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::new(name, FieldKind::F32Vec)
        }
    }
}

/// Ordered, validated field list. The first `u64_id` field is the item key
/// used for ordering ties and deduplication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSchema {
    fields: Vec<FieldSpec>,
    ts_index: usize,
    item_index: Option<usize>,
    hash: u64,
}

impl SequenceSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, StoreError> {
        let bad = |m: String| Err(StoreError::InvalidSchema(m));
        let mut names = HashSet::new();
        for f in &fields {
            if f.name.is_empty() || !names.insert(f.name.as_str()) {
                return bad(format!("field name {:?} is empty or repeated", f.name));
            }
            match (f.kind, f.dim) {
                (FieldKind::F32Vec, Some(d)) if d > 0 => {}
                (FieldKind::F32Vec, _) => return bad(format!("f32_vec field {} needs dim > 0", f.name)),
                (_, Some(_)) => return bad(format!("field {} has dim but is not f32_vec", f.name)),
                _ => {}
            }
        }
        let ts: Vec<usize> = fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FieldKind::I64Timestamp)
            .map(|(i, _)| i)
            .collect();
        if ts.len() != 1 {
            return bad(format!("need exactly one i64_timestamp field, found {}", ts.len()));
        }
        if fields[ts[0]].nullable {
            return bad("the timestamp field cannot be nullable".into());
        }
        let item_index = fields.iter().position(|f| f.kind == FieldKind::U64Id);
        let hash = fnv1a(canonical(&fields).as_bytes());
        Ok(Self {
            fields,
            ts_index: ts[0],
            item_index,
            hash,
        })
    }

    /// Default behaviour schema: item, scenario, action, timestamp, optional
    /// similarity score and optional embedding reference.
    pub fn behavior_default() -> Self {
        Self::new(vec![
            FieldSpec::new("item_id", FieldKind::U64Id),
            FieldSpec::new("category", FieldKind::U32Enum),
            FieldSpec::new("scenario", FieldKind::U32Enum),
            FieldSpec::new("action", FieldKind::U32Enum),
            FieldSpec::new("ts", FieldKind::I64Timestamp),
            FieldSpec::new("similarity", FieldKind::F32).nullable(),
            FieldSpec::new("embedding_ref", FieldKind::U64Id).nullable(),
        ])
        .expect("built-in schema is valid")
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn schema_hash(&self) -> u64 {
        self.hash
    }

    pub fn timestamp_index(&self) -> usize {
        self.ts_index
    }

    pub fn item_index(&self) -> Option<usize> {
        self.item_index
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let fields: Vec<FieldSpec> =
            serde_json::from_str(text).map_err(|e| StoreError::InvalidSchema(e.to_string()))?;
        Self::new(fields)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.fields).expect("field specs serialize")
    }

    /// Checks value types, presence and the positive-timestamp rule.
    pub fn check(&self, event: &BehaviorEvent) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::InvalidEvent(m));
        if event.values.len() != self.fields.len() {
            return bad(format!("expected {} values, got {}", self.fields.len(), event.values.len()));
        }
        for (f, v) in self.fields.iter().zip(&event.values) {
            let ok = match (f.kind, v) {
                (_, Value::Null) => f.nullable,
                (FieldKind::U64Id, Value::U64(_))
                | (FieldKind::U32Enum, Value::U32(_))
                | (FieldKind::I64Timestamp, Value::I64(_))
                | (FieldKind::F32, Value::F32(_))
                | (FieldKind::U16, Value::U16(_)) => true,
                (FieldKind::F32Vec, Value::F32Vec(x)) => Some(x.len()) == f.dim,
                _ => false,
            };
            if !ok {
                return bad(format!("field {} ({}) cannot hold {v:?}", f.name, f.kind.tag()));
            }
        }
        if event.timestamp(self) <= 0 {
            return bad(format!("timestamp must be positive, got {}", event.timestamp(self)));
        }
        Ok(())
    }

    /// Parses a JSON object keyed by field name; absent nullable fields are null.
    pub fn event_from_json(&self, obj: &Map<String, Json>) -> Result<BehaviorEvent, StoreError> {
        let bad = |m: String| StoreError::InvalidEvent(m);
        let mut values = Vec::with_capacity(self.fields.len());
        for f in &self.fields {
            let j = obj.get(&f.name).unwrap_or(&Json::Null);
            let v = match (f.kind, j) {
                (_, Json::Null) => Value::Null,
                (FieldKind::U64Id, j) => Value::U64(j.as_u64().ok_or_else(|| bad(format!("{}: not a u64", f.name)))?),
                (FieldKind::U32Enum, j) => Value::U32(
                    j.as_u64()
                        .and_then(|x| u32::try_from(x).ok())
                        .ok_or_else(|| bad(format!("{}: not a u32", f.name)))?,
                ),
                (FieldKind::U16, j) => Value::U16(
                    j.as_u64()
                        .and_then(|x| u16::try_from(x).ok())
                        .ok_or_else(|| bad(format!("{}: not a u16", f.name)))?,
                ),
                (FieldKind::I64Timestamp, j) => Value::I64(j.as_i64().ok_or_else(|| bad(format!("{}: not an i64", f.name)))?),
                (FieldKind::F32, j) => Value::F32(j.as_f64().ok_or_else(|| bad(format!("{}: not a number", f.name)))? as f32),
                (FieldKind::F32Vec, Json::Array(xs)) => Value::F32Vec(
                    xs.iter()
                        .map(|x| x.as_f64().map(|x| x as f32))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad(format!("{}: not a number array", f.name)))?,
                ),
                (FieldKind::F32Vec, _) => return Err(bad(format!("{}: not an array", f.name))),
            };
            values.push(v);
        }
        let ev = BehaviorEvent { values };
        self.check(&ev)?;
        Ok(ev)
    }

    pub fn event_to_json(&self, event: &BehaviorEvent) -> Map<String, Json> {
        self.fields
            .iter()
            .zip(&event.values)
            .map(|(f, v)| {
                let j = match v {
                    Value::Null => Json::Null,
                    Value::U64(x) => Json::from(*x),
                    Value::U32(x) => Json::from(*x),
                    Value::U16(x) => Json::from(*x),
                    Value::I64(x) => Json::from(*x),
                    Value::F32(x) => Json::from(*x as f64),
                    Value::F32Vec(xs) => Json::Array(xs.iter().map(|&x| Json::from(x as f64)).collect()),
                };
                (f.name.clone(), j)
            })
            .collect()
    }
}

fn canonical(fields: &[FieldSpec]) -> String {
    let mut s = String::from("seqvault-schema-v1");
    for f in fields {
        s.push('|');
        s.push_str(&f.name);
        s.push(':');
        s.push_str(f.kind.tag());
        if let Some(d) = f.dim {
            s.push_str(&format!(":{d}"));
        }
        s.push_str(if f.nullable { ":null" } else { ":req" });
    }
    s
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// One typed field value.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    U64(u64),
    U32(u32),
    U16(u16),
    I64(i64),
    F32(f32),
    F32Vec(Vec<f32>),
}

/// Floats compare by bit pattern, so round trips can be checked exactly.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (Null, Null) => true,
            (U64(a), U64(b)) => a == b,
            (U32(a), U32(b)) => a == b,
            (U16(a), U16(b)) => a == b,
            (I64(a), I64(b)) => a == b,
            (F32(a), F32(b)) => a.to_bits() == b.to_bits(),
            (F32Vec(a), F32Vec(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

impl Eq for Value {}

/// One behaviour event, values in schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorEvent {
    pub values: Vec<Value>,
}

impl BehaviorEvent {
    pub fn timestamp(&self, schema: &SequenceSchema) -> i64 {
        match self.values.get(schema.ts_index) {
            Some(Value::I64(t)) => *t,
            _ => 0,
        }
    }

    pub fn item(&self, schema: &SequenceSchema) -> u64 {
        match schema.item_index.and_then(|i| self.values.get(i)) {
            Some(Value::U64(x)) => *x,
            _ => 0,
        }
    }

    /// `(timestamp, item)`; larger keys are newer.
    pub fn key(&self, schema: &SequenceSchema) -> (i64, u64) {
        (self.timestamp(schema), self.item(schema))
    }
}
