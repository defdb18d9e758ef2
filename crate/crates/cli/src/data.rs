//! CSV inputs and outputs. Every file takes an optional leading `g` column
//! (game index, default 0). Covariates are `t,m,x1..xK` (`t,s,x1..xK` for
//! network games), adjacency is `s,t,value` with a nonzero value making `t`
//! a peer of `s`, and outcomes are `t,m,y` (`t,s,y` for network games).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use csv::{ReaderBuilder, StringRecord, Trim};
use supergame::{ActionProfile, GameKind, GameModel, Network, ShockFamily, ShockMatrix};

/// A parsed CSV file with its header.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = ReaderBuilder::new().trim(Trim::All).from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let headers = rdr.headers().with_context(|| format!("{}: reading header", path.display()))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.with_context(|| format!("{}: malformed record", path.display()))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table { path: path.to_path_buf(), headers, rows })
    }

    fn name(&self) -> String {
        self.path.display().to_string()
    }

    fn find(&self, column: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == column)
    }

    fn column(&self, column: &str) -> Result<usize> {
        self.find(column).ok_or_else(|| anyhow!("{}: missing column '{column}' (header is '{}')", self.name(), self.headers.join(",")))
    }

    fn cell<'a>(&self, row: &'a StringRecord, col: usize, line: u64) -> Result<&'a str> {
        row.get(col).ok_or_else(|| anyhow!("{} line {line}: no value in column '{}'", self.name(), self.headers[col]))
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let (line, rec) = &self.rows[row];
        let s = self.cell(rec, col, *line)?;
        let v: f64 = s
            .parse()
            .map_err(|_| anyhow!("{} line {line}, column '{}': cannot parse '{s}' as a number", self.name(), self.headers[col]))?;
        if !v.is_finite() {
            bail!("{} line {line}, column '{}': value '{s}' is not finite", self.name(), self.headers[col]);
        }
        Ok(v)
    }

    fn index(&self, row: usize, col: usize) -> Result<usize> {
        let (line, rec) = &self.rows[row];
        let s = self.cell(rec, col, *line)?;
        s.parse()
            .map_err(|_| anyhow!("{} line {line}, column '{}': '{s}' is not a nonnegative integer index", self.name(), self.headers[col]))
    }

    fn game(&self, row: usize, g_col: Option<usize>) -> Result<usize> {
        g_col.map_or(Ok(0), |c| self.index(row, c))
    }

    fn line(&self, row: usize) -> u64 {
        self.rows[row].0
    }
}

/// Name of the second key column for `kind`.
pub fn action_key(kind: GameKind) -> &'static str {
    if kind.is_network() {
        "s"
    } else {
        "m"
    }
}

/// Arc index of `t -> s` among `t`'s `T - 1` possible targets.
fn dyad_action(t: usize, s: usize) -> usize {
    if s < t {
        s
    } else {
        s - 1
    }
}

/// (t, second key) -> (line, covariate row)
type GameRows = BTreeMap<(usize, usize), (u64, Vec<f64>)>;

/// Models read from disk, with whether the files carried a `g` column.
pub struct Inputs {
    pub models: Vec<GameModel>,
    pub multi_game: bool,
}

pub struct ModelSpec<'a> {
    pub kind: GameKind,
    pub family: ShockFamily,
    pub effects: bool,
    pub covariates: &'a Path,
    pub adjacency: Option<&'a Path>,
}

pub fn load_models(spec: &ModelSpec<'_>) -> Result<Inputs> {
    let kind = spec.kind;
    let tab = Table::read(spec.covariates)?;
    let g_col = tab.find("g");
    let t_col = tab.column("t")?;
    let a_col = tab.column(action_key(kind))?;
    let x_cols: Vec<usize> = (0..tab.headers.len()).filter(|&c| Some(c) != g_col && c != t_col && c != a_col).collect();
    if x_cols.is_empty() {
        bail!("{}: no covariate columns after the key columns", tab.name());
    }

    let mut games: BTreeMap<usize, GameRows> = BTreeMap::new();
    for r in 0..tab.rows.len() {
        let g = tab.game(r, g_col)?;
        let (t, a) = (tab.index(r, t_col)?, tab.index(r, a_col)?);
        if kind.is_network() && t == a {
            bail!("{} line {}: self-arc t = s = {t}", tab.name(), tab.line(r));
        }
        let x = x_cols.iter().map(|&c| tab.number(r, c)).collect::<Result<Vec<_>>>()?;
        if let Some((prev, _)) = games.entry(g).or_default().insert((t, a), (tab.line(r), x)) {
            bail!(
                "{} line {}: duplicate row for game {g}, t = {t}, {} = {a} (first at line {prev})",
                tab.name(),
                tab.line(r),
                action_key(kind)
            );
        }
    }
    let n_games = games.keys().next_back().map_or(0, |g| g + 1);
    if n_games == 0 {
        bail!("{}: no rows", tab.name());
    }
    let mut adjacency = match spec.adjacency {
        Some(path) => Some(load_adjacency(path, kind)?),
        None => None,
    };

    let mut models = Vec::with_capacity(n_games);
    for g in 0..n_games {
        let rows = games.get(&g).ok_or_else(|| anyhow!("{}: no rows for game {g}", tab.name()))?;
        let max_t = rows.keys().map(|k| k.0).max().unwrap_or(0);
        let max_a = rows.keys().map(|k| k.1).max().unwrap_or(0);
        let (players, actions) = if kind.is_network() {
            let players = max_t.max(max_a) + 1;
            (players, players - 1)
        } else {
            (max_t + 1, max_a + 1)
        };
        let mut flat = vec![Vec::new(); players * actions];
        for t in 0..players {
            for a in 0..if kind.is_network() { players } else { actions } {
                if kind.is_network() && a == t {
                    continue;
                }
                let (_, x) =
                    rows.get(&(t, a)).ok_or_else(|| anyhow!("{}: no row for game {g}, t = {t}, {} = {a}", tab.name(), action_key(kind)))?;
                let m = if kind.is_network() { dyad_action(t, a) } else { a };
                flat[t * actions + m].clone_from(x);
            }
        }
        let network = match adjacency.as_mut() {
            Some(adj) => Some(adj.network(g, players)?),
            None => None,
        };
        let model = GameModel::new(kind, players, actions, x_cols.len(), flat.concat(), network, spec.effects)
            .with_context(|| format!("building game {g}"))?
            .with_family(spec.family);
        models.push(model);
    }
    if let Some(adj) = adjacency {
        if let Some(g) = adj.games.keys().find(|&&g| g >= n_games) {
            bail!("{}: adjacency for game {g}, which has no covariates", adj.name);
        }
    }
    Ok(Inputs { models, multi_game: g_col.is_some() })
}

struct Adjacency {
    name: String,
    /// game -> links (s, t) with their lines
    games: BTreeMap<usize, Vec<(usize, usize, u64)>>,
}

fn load_adjacency(path: &Path, kind: GameKind) -> Result<Adjacency> {
    let tab = Table::read(path)?;
    if !matches!(kind, GameKind::PeerEffectsMean | GameKind::PeerEffectsCount | GameKind::MultiActionPeer) {
        bail!("{}: {kind:?} games take no adjacency file", tab.name());
    }
    let g_col = tab.find("g");
    let (s_col, t_col, v_col) = (tab.column("s")?, tab.column("t")?, tab.column("value")?);
    let mut games: BTreeMap<usize, Vec<(usize, usize, u64)>> = BTreeMap::new();
    for r in 0..tab.rows.len() {
        let g = tab.game(r, g_col)?;
        let (s, t, v) = (tab.index(r, s_col)?, tab.index(r, t_col)?, tab.number(r, v_col)?);
        if v < 0.0 {
            bail!("{} line {}, cell (s = {s}, t = {t}): negative adjacency value {v}", tab.name(), tab.line(r));
        }
        if v != 0.0 {
            if s == t {
                bail!("{} line {}, cell (s = {s}, t = {t}): nonzero diagonal entry {v}", tab.name(), tab.line(r));
            }
            games.entry(g).or_default().push((s, t, tab.line(r)));
        }
    }
    Ok(Adjacency { name: tab.name(), games })
}

impl Adjacency {
    fn network(&mut self, g: usize, players: usize) -> Result<Network> {
        let links = self.games.remove(&g).unwrap_or_default();
        if let Some(&(s, t, line)) = links.iter().find(|&&(s, t, _)| s >= players || t >= players) {
            bail!("{} line {line}, cell (s = {s}, t = {t}): index outside game {g} with {players} players", self.name);
        }
        Ok(Network::from_pairs(players, links.into_iter().map(|(s, t, _)| (s, t)))?)
    }
}

/// Outcomes for each model, in game order.
pub fn load_outcomes(path: &Path, kind: GameKind, models: &[GameModel]) -> Result<Vec<ActionProfile>> {
    let tab = Table::read(path)?;
    let g_col = tab.find("g");
    let (t_col, a_col, y_col) = (tab.column("t")?, tab.column(action_key(kind))?, tab.column("y")?);
    let mut seen: Vec<Vec<Option<u64>>> = models.iter().map(|m| vec![None; m.coords()]).collect();
    let mut profiles: Vec<Vec<bool>> = models.iter().map(|m| vec![false; m.coords()]).collect();
    for r in 0..tab.rows.len() {
        let line = tab.line(r);
        let g = tab.game(r, g_col)?;
        let (t, a) = (tab.index(r, t_col)?, tab.index(r, a_col)?);
        let model = models.get(g).ok_or_else(|| anyhow!("{} line {line}: game {g} has no covariates", tab.name()))?;
        let c = coordinate(model, t, a).ok_or_else(|| anyhow!("{} line {line}: ({t}, {a}) is not a coordinate of game {g}", tab.name()))?;
        let y = match tab.cell(&tab.rows[r].1, y_col, line)? {
            "0" => false,
            "1" => true,
            other => bail!("{} line {line}, column 'y': expected 0 or 1, found '{other}'", tab.name()),
        };
        if let Some(prev) = seen[g][c].replace(line) {
            bail!("{} line {line}: duplicate outcome for game {g}, ({t}, {a}) (first at line {prev})", tab.name());
        }
        profiles[g][c] = y;
    }
    models
        .iter()
        .zip(profiles)
        .enumerate()
        .map(|(g, (m, y))| {
            if let Some(c) = seen[g].iter().position(Option::is_none) {
                let (t, a) = key_of(m, c);
                bail!("{}: no outcome for game {g}, t = {t}, {} = {a}", tab.name(), action_key(kind));
            }
            Ok(ActionProfile::from_vec(m.players(), m.actions(), y)?)
        })
        .collect()
}

fn coordinate(model: &GameModel, t: usize, a: usize) -> Option<usize> {
    if t >= model.players() {
        return None;
    }
    if model.kind().is_network() {
        (a < model.players() && a != t).then(|| model.arc(t, a))
    } else {
        (a < model.actions()).then(|| model.coord(t, a))
    }
}

/// `(t, m)` or, for network games, `(t, s)` of coordinate `c`.
fn key_of(model: &GameModel, c: usize) -> (usize, usize) {
    let (t, m) = model.split(c);
    if model.kind().is_network() {
        (t, model.dyad_target(t, m))
    } else {
        (t, m)
    }
}

fn write_rows(
    out: &mut dyn Write,
    kind: GameKind,
    multi_game: bool,
    value: &str,
    models: &[GameModel],
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let key = action_key(kind);
    if multi_game {
        w.write_record(["g", "t", key, value])?;
    } else {
        w.write_record(["t", key, value])?;
    }
    for (g, m) in models.iter().enumerate() {
        for c in 0..m.coords() {
            let (t, a) = key_of(m, c);
            let (t, a, v) = (t.to_string(), a.to_string(), cell(g, c));
            if multi_game {
                w.write_record([g.to_string(), t, a, v])?;
            } else {
                w.write_record([t, a, v])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_outcomes(out: &mut dyn Write, kind: GameKind, multi_game: bool, models: &[GameModel], y: &[ActionProfile]) -> Result<()> {
    write_rows(out, kind, multi_game, "y", models, |g, c| (y[g].as_slice()[c] as u8).to_string())
}

/// Shocks in shortest round-trip decimal form.
pub fn write_shocks(out: &mut dyn Write, kind: GameKind, multi_game: bool, models: &[GameModel], u: &[ShockMatrix]) -> Result<()> {
    write_rows(out, kind, multi_game, "u", models, |g, c| u[g].as_slice()[c].to_string())
}
