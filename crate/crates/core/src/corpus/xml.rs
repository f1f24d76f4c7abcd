use quick_xml::events::Event;
use quick_xml::Reader;

use super::{canonicalize_name, CorpusError, Result, TrialRecord};

const TRIAL_ID_TAG: &str = "nct_id";
const INTERVENTION_TAG: &str = "intervention_name";
const STATUS_TAG: &str = "overall_status";
const WHY_STOP_TAGS: [&str; 2] = ["why_stop", "why_stopped"];

struct Frame {
    name: String,
    text: String,
}

/// Parse one registry record.
///
/// Every element with non-blank text becomes a `(tag-path, text)` field, with
/// whitespace inside the text collapsed so each field fits on one line.
pub fn parse_trial_xml(xml_text: &str) -> Result<TrialRecord> {
    let mut reader = Reader::from_str(xml_text);
    reader.config_mut().check_end_names = true;

    let mut stack: Vec<Frame> = Vec::new();
    let mut root_seen = false;
    let mut fields = Vec::new();
    let mut trial_id: Option<String> = None;
    let mut interventions: Vec<String> = Vec::new();
    let mut overall_status = None;
    let mut why_stop = None;

    let malformed = |e: &dyn std::fmt::Display| CorpusError::MalformedXml(e.to_string());

    loop {
        let event = reader.read_event().map_err(|e| malformed(&e))?;
        match event {
            Event::Start(start) => {
                let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
                match stack.last() {
                    Some(_) => {}
                    None if root_seen => return Err(malformed(&"more than one root element")),
                    None => root_seen = true,
                }
                stack.push(Frame {
                    name,
                    text: String::new(),
                });
            }
            Event::Empty(_) => match stack.last() {
                Some(_) => {}
                None if root_seen => return Err(malformed(&"more than one root element")),
                None => root_seen = true,
            },
            Event::Text(text) => {
                let decoded = text.xml_content().map_err(|e| malformed(&e))?;
                match stack.last_mut() {
                    Some(frame) => frame.text.push_str(&decoded),
                    None if decoded.trim().is_empty() => {}
                    None => return Err(malformed(&"text outside the root element")),
                }
            }
            Event::CData(cdata) => {
                let decoded = cdata.decode().map_err(|e| malformed(&e))?;
                match stack.last_mut() {
                    Some(frame) => frame.text.push_str(&decoded),
                    None => return Err(malformed(&"CDATA outside the root element")),
                }
            }
            Event::GeneralRef(reference) => {
                let resolved = match reference.resolve_char_ref().map_err(|e| malformed(&e))? {
                    Some(ch) => ch.to_string(),
                    None => {
                        let name = reference.decode().map_err(|e| malformed(&e))?;
                        quick_xml::escape::unescape(&format!("&{name};"))
                            .map_err(|e| malformed(&e))?
                            .into_owned()
                    }
                };
                match stack.last_mut() {
                    Some(frame) => frame.text.push_str(&resolved),
                    None => return Err(malformed(&"entity reference outside the root element")),
                }
            }
            Event::End(_) => {
                let frame = stack.pop().ok_or_else(|| malformed(&"unbalanced end tag"))?;
                if stack.is_empty() {
                    // root element: its own text is not a field
                    continue;
                }
                let text = frame.text.split_whitespace().collect::<Vec<_>>().join(" ");
                if text.is_empty() {
                    continue;
                }
                let name = frame.name.as_str();
                if name == TRIAL_ID_TAG && trial_id.is_none() {
                    trial_id = Some(text.clone());
                }
                if name == INTERVENTION_TAG {
                    let canonical = canonicalize_name(&text);
                    if !interventions.contains(&canonical) {
                        interventions.push(canonical);
                    }
                }
                if name == STATUS_TAG && overall_status.is_none() {
                    overall_status = Some(text.clone());
                }
                if WHY_STOP_TAGS.contains(&name) && why_stop.is_none() {
                    why_stop = Some(text.clone());
                }
                let mut path: Vec<&str> = stack.iter().skip(1).map(|f| f.name.as_str()).collect();
                path.push(name);
                fields.push((path.join("/"), text));
            }
            Event::Eof => break,
            Event::Comment(_) | Event::Decl(_) | Event::PI(_) | Event::DocType(_) => {}
        }
    }

    if !stack.is_empty() {
        return Err(malformed(&format!(
            "unclosed element <{}>",
            stack[stack.len() - 1].name
        )));
    }
    if !root_seen {
        return Err(malformed(&"no root element"));
    }
    let trial_id = trial_id.ok_or(CorpusError::MissingTrialId)?;

    Ok(TrialRecord {
        trial_id,
        raw_xml: xml_text.to_string(),
        fields,
        intervention_names: interventions,
        overall_status,
        why_stop,
    })
}
