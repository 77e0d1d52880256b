//! Topic-based publish/subscribe with `+` and trailing `#` wildcards.
//!
//! `#` also matches the parent level, so `a/#` matches `a`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::IotError;

pub fn validate_topic(topic: &str) -> Result<(), IotError> {
    if topic.is_empty() || topic.contains(['+', '#', '\0']) {
        return Err(IotError::BadTopic(topic.to_string()));
    }
    Ok(())
}

pub fn validate_filter(filter: &str) -> Result<(), IotError> {
    if filter.is_empty() || filter.contains('\0') {
        return Err(IotError::BadFilter(filter.to_string()));
    }
    let segs: Vec<&str> = filter.split('/').collect();
    for (i, s) in segs.iter().enumerate() {
        let ok = match *s {
            "+" => true,
            "#" => i == segs.len() - 1,
            s => !s.contains(['+', '#']),
        };
        if !ok {
            return Err(IotError::BadFilter(filter.to_string()));
        }
    }
    Ok(())
}

/// Segment-wise match of a (valid) filter against a (valid) topic.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PubSubMessage {
    pub topic: String,
    pub payload: Vec<u8>,
    #[serde(default)]
    pub retained: bool,
}

impl PubSubMessage {
    pub fn text(topic: impl Into<String>, text: &str) -> Self {
        PubSubMessage {
            topic: topic.into(),
            payload: text.as_bytes().to_vec(),
            retained: false,
        }
    }

    pub fn payload_text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }
}

pub type SubscriptionId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub id: SubscriptionId,
    pub owner: String,
    pub filter: String,
}

#[derive(Debug, Default)]
pub struct Broker {
    subs: Vec<Subscription>,
    retained: BTreeMap<String, PubSubMessage>,
    next_id: SubscriptionId,
}

impl Broker {
    pub fn new() -> Self {
        Broker::default()
    }

    /// Registers a subscription and returns it with the retained messages
    /// it matches, in topic order.
    pub fn subscribe(&mut self, owner: &str, filter: &str) -> Result<(Subscription, Vec<PubSubMessage>), IotError> {
        validate_filter(filter)?;
        self.next_id += 1;
        let sub = Subscription {
            id: self.next_id,
            owner: owner.to_string(),
            filter: filter.to_string(),
        };
        self.subs.push(sub.clone());
        let retained = self
            .retained
            .values()
            .filter(|m| topic_matches(filter, &m.topic))
            .cloned()
            .collect();
        Ok((sub, retained))
    }

    pub fn unsubscribe(&mut self, id: SubscriptionId) -> bool {
        let before = self.subs.len();
        self.subs.retain(|s| s.id != id);
        self.subs.len() != before
    }

    /// Matching subscriptions in subscription order.
    pub fn publish(&mut self, msg: &PubSubMessage) -> Result<Vec<Subscription>, IotError> {
        validate_topic(&msg.topic)?;
        if msg.retained {
            if msg.payload.is_empty() {
                self.retained.remove(&msg.topic);
            } else {
                self.retained.insert(msg.topic.clone(), msg.clone());
            }
        }
        Ok(self
            .subs
            .iter()
            .filter(|s| topic_matches(&s.filter, &msg.topic))
            .cloned()
            .collect())
    }

    pub fn retained(&self, topic: &str) -> Option<&PubSubMessage> {
        self.retained.get(topic)
    }
}
