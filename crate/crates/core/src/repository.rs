//! Flat-file persistence: the binary transaction matrix, the mining config,
//! the trigger audit log and the mined-rule store.
//!
//! All mutation goes through one [`Repository`] value; callers that share it
//! across threads wrap it in a mutex.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::itemset::{ItemId, Itemset};
use crate::mining::{AssociationRule, MiningConfig, TransactionSet, DEFAULT_MIN_CONFIDENCE};
use crate::service::ServiceId;

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("storage error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("duplicate trigger event id {0}")]
    DuplicateEventId(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RepositoryError + '_ {
    move |source| RepositoryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> RepositoryError {
    RepositoryError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses the config file: universe size, transaction count, support
/// percent, and an optional fourth line with the minimum confidence.
pub fn parse_config(text: &str, path: &Path) -> Result<MiningConfig, RepositoryError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.len() < 3 || lines.len() > 4 {
        return Err(parse_err(
            path,
            lines.last().map_or(1, |(n, _)| *n),
            format!("expected 3 or 4 config lines, found {}", lines.len()),
        ));
    }
    let (n, l) = lines[0];
    let universe_size: u32 = l
        .parse()
        .map_err(|_| parse_err(path, n, format!("item count {l:?} is not an integer")))?;
    let (n, l) = lines[1];
    let transaction_count: usize = l.parse().map_err(|_| {
        parse_err(
            path,
            n,
            format!("transaction count {l:?} is not an integer"),
        )
    })?;
    let (n, l) = lines[2];
    let min_support_percent: f64 = l
        .parse()
        .map_err(|_| parse_err(path, n, format!("support {l:?} is not a number")))?;
    let min_confidence = match lines.get(3) {
        Some(&(n, l)) => l
            .parse()
            .map_err(|_| parse_err(path, n, format!("confidence {l:?} is not a number")))?,
        None => DEFAULT_MIN_CONFIDENCE,
    };
    let config = MiningConfig {
        universe_size,
        transaction_count,
        min_support_percent,
        min_confidence,
    };
    config
        .validate()
        .map_err(|e| parse_err(path, lines.len().min(3), e.to_string()))?;
    Ok(config)
}

/// Writes the fourth line only when the confidence differs from the default.
pub fn format_config(config: &MiningConfig) -> String {
    let mut out = format!(
        "{}\n{}\n{}\n",
        config.universe_size, config.transaction_count, config.min_support_percent
    );
    if config.min_confidence != DEFAULT_MIN_CONFIDENCE {
        out.push_str(&format!("{}\n", config.min_confidence));
    }
    out
}

/// Parses the 0/1 matrix. Column `j` set means item `j` was purchased.
pub fn parse_transactions(
    text: &str,
    universe_size: u32,
    declared_count: usize,
    path: &Path,
) -> Result<TransactionSet, RepositoryError> {
    let mut set = TransactionSet::new(universe_size);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.is_empty() {
            return Err(parse_err(path, line_no, "blank row"));
        }
        if cells.len() != universe_size as usize {
            return Err(parse_err(
                path,
                line_no,
                format!("row has {} cells, expected {universe_size}", cells.len()),
            ));
        }
        let mut items = Vec::new();
        for (col, cell) in cells.iter().enumerate() {
            match *cell {
                "1" => items.push(col as u32 + 1),
                "0" => {}
                other => {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("non-binary cell {other:?} in column {}", col + 1),
                    ))
                }
            }
        }
        let items = Itemset::from_indices(items).expect("1-based columns");
        set.push(items)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
    }
    if set.len() != declared_count {
        return Err(parse_err(
            path,
            set.len().max(1),
            format!(
                "config declares {declared_count} transactions but the file holds {}",
                set.len()
            ),
        ));
    }
    Ok(set)
}

/// One matrix row, e.g. `1 0 0 0 0 1`.
pub fn format_row(items: &Itemset, universe_size: u32) -> String {
    (1..=universe_size)
        .map(|j| {
            if items.contains(ItemId::new(j).expect("1-based")) {
                "1"
            } else {
                "0"
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn format_transactions(set: &TransactionSet) -> String {
    set.transactions()
        .iter()
        .map(|t| format_row(&t.items, set.universe_size()) + "\n")
        .collect()
}

/// Reads a transaction matrix plus its config.
pub fn load_dataset(
    transactions_path: &Path,
    config_path: &Path,
) -> Result<(TransactionSet, MiningConfig), RepositoryError> {
    let cfg_text = fs::read_to_string(config_path).map_err(io_err(config_path))?;
    let config = parse_config(&cfg_text, config_path)?;
    let tx_text = fs::read_to_string(transactions_path).map_err(io_err(transactions_path))?;
    let set = parse_transactions(
        &tx_text,
        config.universe_size,
        config.transaction_count,
        transactions_path,
    )?;
    Ok((set, config))
}

/// Audit record of one triggered request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerRecord {
    pub event_id: String,
    pub requested_items: Itemset,
    /// UTC seconds.
    pub timestamp: u64,
    pub cause: String,
}

impl TriggerRecord {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\n",
            self.event_id,
            self.timestamp,
            self.cause,
            self.requested_items.to_csv()
        )
    }

    fn from_line(line: &str, path: &Path, line_no: usize) -> Result<Self, RepositoryError> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [event_id, timestamp, cause, items] = fields[..] else {
            return Err(parse_err(path, line_no, "expected 4 tab-separated fields"));
        };
        Ok(TriggerRecord {
            event_id: event_id.to_string(),
            timestamp: timestamp
                .parse()
                .map_err(|_| parse_err(path, line_no, "bad timestamp"))?,
            cause: cause.to_string(),
            requested_items: Itemset::parse_csv(items)
                .map_err(|e| parse_err(path, line_no, e.to_string()))?,
        })
    }
}

/// A mined rule together with the composite registered from it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleStoreEntry {
    pub rule: AssociationRule,
    pub discovered_at: u64,
    pub composite_service: Option<ServiceId>,
}

impl RuleStoreEntry {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            self.rule.antecedent.to_csv(),
            self.rule.consequent.to_csv(),
            self.rule.support_count,
            self.rule.confidence,
            self.discovered_at,
            self.composite_service
                .as_ref()
                .map_or("-", ServiceId::as_str)
        )
    }

    fn from_line(line: &str, path: &Path, line_no: usize) -> Result<Self, RepositoryError> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [antecedent, consequent, support, confidence, discovered_at, service] = fields[..]
        else {
            return Err(parse_err(path, line_no, "expected 6 tab-separated fields"));
        };
        let bad = |what: &str| parse_err(path, line_no, format!("bad {what}"));
        Ok(RuleStoreEntry {
            rule: AssociationRule {
                antecedent: Itemset::parse_csv(antecedent).map_err(|_| bad("antecedent"))?,
                consequent: Itemset::parse_csv(consequent).map_err(|_| bad("consequent"))?,
                support_count: support.parse().map_err(|_| bad("support count"))?,
                confidence: confidence.parse().map_err(|_| bad("confidence"))?,
            },
            discovered_at: discovered_at.parse().map_err(|_| bad("timestamp"))?,
            composite_service: match service {
                "-" => None,
                s => Some(ServiceId::new(s).map_err(|_| bad("service id"))?),
            },
        })
    }
}

/// File locations used by a [`Repository`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepositoryPaths {
    pub transactions: PathBuf,
    pub config: PathBuf,
    pub trigger_log: PathBuf,
    pub rule_store: PathBuf,
}

impl RepositoryPaths {
    /// `transa.txt`, `config.txt`, `triggers.log` and `rules.tsv` under `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        RepositoryPaths {
            transactions: dir.join("transa.txt"),
            config: dir.join("config.txt"),
            trigger_log: dir.join("triggers.log"),
            rule_store: dir.join("rules.tsv"),
        }
    }
}

/// Single-writer owner of every persisted file.
#[derive(Debug)]
pub struct Repository {
    paths: RepositoryPaths,
    transactions: TransactionSet,
    config: MiningConfig,
    tx_needs_newline: bool,
    triggers: Vec<TriggerRecord>,
    trigger_index: HashMap<String, usize>,
}

impl Repository {
    /// Opens an existing dataset and replays the trigger log if present.
    pub fn open(paths: RepositoryPaths) -> Result<Self, RepositoryError> {
        let (transactions, config) = load_dataset(&paths.transactions, &paths.config)?;
        let tx_needs_newline = fs::read(&paths.transactions)
            .map(|b| !b.is_empty() && !b.ends_with(b"\n"))
            .unwrap_or(false);
        let mut repo = Repository {
            paths,
            transactions,
            config,
            tx_needs_newline,
            triggers: Vec::new(),
            trigger_index: HashMap::new(),
        };
        repo.load_trigger_log()?;
        Ok(repo)
    }

    /// Starts an empty log with `config` (its transaction count is reset to 0).
    pub fn create(paths: RepositoryPaths, config: MiningConfig) -> Result<Self, RepositoryError> {
        config
            .validate()
            .map_err(|e| RepositoryError::Contract(e.to_string()))?;
        let config = MiningConfig {
            transaction_count: 0,
            ..config
        };
        write_atomic(&paths.config, format_config(&config).as_bytes())?;
        write_atomic(&paths.transactions, b"")?;
        Self::open(paths)
    }

    fn load_trigger_log(&mut self) -> Result<(), RepositoryError> {
        let path = &self.paths.trigger_log;
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(io_err(path)(e)),
        };
        for (i, line) in text.lines().enumerate() {
            let record = TriggerRecord::from_line(line, path, i + 1)?;
            self.trigger_index
                .insert(record.event_id.clone(), self.triggers.len());
            self.triggers.push(record);
        }
        Ok(())
    }

    pub fn paths(&self) -> &RepositoryPaths {
        &self.paths
    }

    pub fn transactions(&self) -> &TransactionSet {
        &self.transactions
    }

    pub fn config(&self) -> &MiningConfig {
        &self.config
    }

    pub fn universe_size(&self) -> u32 {
        self.config.universe_size
    }

    /// Appends one purchase as a matrix row and bumps the declared count.
    /// Both files are synced before returning.
    pub fn append_transaction(&mut self, items: &Itemset) -> Result<usize, RepositoryError> {
        if items.is_empty() {
            return Err(RepositoryError::Contract(
                "empty purchases are not recorded".into(),
            ));
        }
        items
            .check_universe(self.config.universe_size)
            .map_err(|e| RepositoryError::Contract(e.to_string()))?;

        let path = &self.paths.transactions;
        let mut row = String::new();
        if self.tx_needs_newline {
            row.push('\n');
        }
        row.push_str(&format_row(items, self.config.universe_size));
        row.push('\n');
        let mut file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        file.write_all(row.as_bytes()).map_err(io_err(path))?;
        file.sync_all().map_err(io_err(path))?;
        self.tx_needs_newline = false;

        let mut config = self.config.clone();
        config.transaction_count += 1;
        write_atomic(&self.paths.config, format_config(&config).as_bytes())?;
        self.config = config;
        self.transactions
            .push(items.clone())
            .map_err(|e| RepositoryError::Contract(e.to_string()))?;
        Ok(self.config.transaction_count)
    }

    /// Appends to the audit log. Ids are unique and timestamps never go back.
    pub fn record_trigger(&mut self, record: TriggerRecord) -> Result<(), RepositoryError> {
        if self.trigger_index.contains_key(&record.event_id) {
            return Err(RepositoryError::DuplicateEventId(record.event_id));
        }
        let field_ok = |s: &str| !s.is_empty() && !s.contains(['\t', '\n', '\r']);
        if !field_ok(&record.event_id) || !field_ok(&record.cause) {
            return Err(RepositoryError::Contract(
                "event id and cause must be non-empty and free of tabs/newlines".into(),
            ));
        }
        if let Some(last) = self.triggers.last() {
            if record.timestamp < last.timestamp {
                return Err(RepositoryError::Contract(format!(
                    "timestamp {} precedes last logged {}",
                    record.timestamp, last.timestamp
                )));
            }
        }
        let path = &self.paths.trigger_log;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        file.write_all(record.to_line().as_bytes())
            .map_err(io_err(path))?;
        file.sync_data().map_err(io_err(path))?;
        self.trigger_index
            .insert(record.event_id.clone(), self.triggers.len());
        self.triggers.push(record);
        Ok(())
    }

    pub fn trigger(&self, event_id: &str) -> Option<&TriggerRecord> {
        self.trigger_index.get(event_id).map(|&i| &self.triggers[i])
    }

    pub fn triggers(&self) -> &[TriggerRecord] {
        &self.triggers
    }

    /// Replaces the rule store with `entries`.
    pub fn store_rules(&self, entries: &[RuleStoreEntry]) -> Result<(), RepositoryError> {
        let text: String = entries.iter().map(RuleStoreEntry::to_line).collect();
        write_atomic(&self.paths.rule_store, text.as_bytes())
    }

    /// Entries in stored order; an absent file reads as empty.
    pub fn load_rules(&self) -> Result<Vec<RuleStoreEntry>, RepositoryError> {
        let path = &self.paths.rule_store;
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(path)(e)),
        };
        text.lines()
            .enumerate()
            .map(|(i, line)| RuleStoreEntry::from_line(line, path, i + 1))
            .collect()
    }

    pub fn append_rules(&self, entries: &[RuleStoreEntry]) -> Result<(), RepositoryError> {
        if entries.is_empty() {
            return Ok(());
        }
        let mut all = self.load_rules()?;
        all.extend_from_slice(entries);
        self.store_rules(&all)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RepositoryError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(bytes).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
