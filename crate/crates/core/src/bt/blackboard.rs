use serde_json::{Map, Value};

/// Key-value store shared by the nodes of one tree. Values are JSON so that
/// declarative trees can refer to them as `$key.sub.0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Blackboard {
    map: Map<String, Value>,
}

impl Blackboard {
    pub fn new() -> Blackboard {
        Blackboard::default()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.map.get(key)
    }

    pub fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.map.insert(key.to_string(), v.into());
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key)
    }

    /// Dotted lookup; numeric segments index arrays.
    pub fn lookup(&self, path: &str) -> Option<&Value> {
        let mut parts = path.split('.');
        let mut cur = self.map.get(parts.next()?)?;
        for p in parts {
            cur = match cur {
                Value::Object(m) => m.get(p)?,
                Value::Array(a) => a.get(p.parse::<usize>().ok()?)?,
                _ => return None,
            };
        }
        Some(cur)
    }

    pub fn truthy(&self, path: &str) -> bool {
        match self.lookup(path) {
            None | Some(Value::Null) => false,
            Some(Value::Bool(b)) => *b,
            Some(Value::Number(n)) => n.as_f64().is_some_and(|v| v != 0.0),
            Some(Value::String(s)) => !s.is_empty(),
            Some(Value::Array(a)) => !a.is_empty(),
            Some(Value::Object(o)) => !o.is_empty(),
        }
    }

    pub fn list_len(&self, path: &str) -> usize {
        self.lookup(path).and_then(Value::as_array).map_or(0, Vec::len)
    }

    pub fn increment(&mut self, key: &str) -> u64 {
        let n = self.map.get(key).and_then(Value::as_u64).unwrap_or(0) + 1;
        self.map.insert(key.to_string(), Value::from(n));
        n
    }

    /// Replaces every string of the form `$path` with the blackboard value
    /// at `path`; `$$` escapes a literal dollar.
    pub fn resolve(&self, template: &Value) -> Result<Value, String> {
        Ok(match template {
            Value::String(s) if s.starts_with("$$") => Value::String(s[1..].to_string()),
            Value::String(s) if s.starts_with('$') => {
                self.lookup(&s[1..]).cloned().ok_or_else(|| format!("blackboard has no `{}`", &s[1..]))?
            }
            Value::Array(a) => Value::Array(a.iter().map(|v| self.resolve(v)).collect::<Result<_, _>>()?),
            Value::Object(o) => {
                Value::Object(o.iter().map(|(k, v)| Ok((k.clone(), self.resolve(v)?))).collect::<Result<_, String>>()?)
            }
            other => other.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn lookup_and_resolve() {
        let mut bb = Blackboard::new();
        bb.set("point", json!({"x": 1.5, "pos": [4, 5]}));
        assert_eq!(bb.lookup("point.pos.1"), Some(&json!(5)));
        let t = json!({"x": "$point.x", "lit": "$$x", "n": 3});
        assert_eq!(bb.resolve(&t).unwrap(), json!({"x": 1.5, "lit": "$x", "n": 3}));
        assert!(bb.resolve(&json!("$missing")).is_err());
    }

    #[test]
    fn counters() {
        let mut bb = Blackboard::new();
        assert_eq!(bb.increment("r"), 1);
        assert_eq!(bb.increment("r"), 2);
        assert!(bb.truthy("r"));
    }
}
