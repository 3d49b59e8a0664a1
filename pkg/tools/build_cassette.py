"""Regenerate the bundled replay cassette and matching pipeline config.

Runs the dataset pipeline once against a rule-based stand-in model (recording
every exchange) and freezes the result to tests/data/cassette_toy.json plus
tests/data/config_toy.yaml.  The scenario covers: topic expansion with a
case-insensitive duplicate, the question repetition guard, a first-try SQL
success, a one-round heal, a never-healing query (five failed repair rounds),
a zero-row query healed then rejected by the judge, and paraphrase dedup.

Run from the repo root: python tools/build_cassette.py
"""

from __future__ import annotations

import re
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from t2s.datagen import PipelineConfig, run_pipeline  # noqa: E402
from t2s.gateway import ChatClient, ChatResponse, RecordingTransport  # noqa: E402
from t2s.model import DialectTag  # noqa: E402
from t2s.runner import QueryExecutor, RetailFixture  # noqa: E402

DATA_DIR = REPO / "tests" / "data"

TOY_CONFIG = PipelineConfig(
    seed_topics=("Customer demographics",),
    target_topic_count=2,
    max_questions_per_topic=3,
    max_heal_attempts=5,
    max_rewrites=2,
    split_ratio=0.8,
    rng_seed=7,
    dialects=(DialectTag.GENERIC,),
    model="gpt-4",
    topic_concurrency=1,
)

Q_COUNTRY = "How many customers are there in each country?"
Q_CITIES = "Which cities have the most customers?"
Q_AGE = "What is the average customer age?"
Q_REVENUE = "Which products generated the highest total revenue?"
Q_GROCERY = "What was the revenue per order for Grocery products in 2021?"
Q_CATEGORY = "How profitable is each product category?"

SQL_COUNTRY = """\
WITH per_country AS (
    SELECT country, COUNT(*) AS customer_count
    FROM customers
    GROUP BY country
)
SELECT country, customer_count
FROM per_country
ORDER BY customer_count DESC, country"""

SQL_CITIES_BROKEN = "SELECT city, COUNT(*) AS n FROM customer GROUP BY city ORDER BY n DESC"

SQL_CITIES_FIXED = """\
WITH per_city AS (
    SELECT city, COUNT(*) AS n
    FROM customers
    GROUP BY city
)
SELECT city, n
FROM per_city
ORDER BY n DESC, city"""

SQL_AGE_BROKEN = "SELECT AVG(age) AS average_age FROM customers"

SQL_REVENUE = """\
WITH revenue AS (
    SELECT ol.product_id,
           SUM(ol.quantity * ol.unit_price * (1 - ol.discount)) AS total_revenue
    FROM order_lines ol
    GROUP BY ol.product_id
)
SELECT p.product_name, r.total_revenue
FROM revenue r
JOIN products p ON p.product_id = r.product_id
ORDER BY r.total_revenue DESC
LIMIT 10"""

SQL_GROCERY_2021 = """\
WITH grocery_2021 AS (
    SELECT o.order_id,
           ol.quantity * ol.unit_price * (1 - ol.discount) AS line_revenue
    FROM order_lines ol
    JOIN products p ON p.product_id = ol.product_id
    JOIN orders o ON o.order_id = ol.order_id
    WHERE p.category = 'Grocery'
      AND o.order_date >= '2021-01-01' AND o.order_date < '2022-01-01'
)
SELECT order_id, SUM(line_revenue) AS revenue
FROM grocery_2021
GROUP BY order_id"""

SQL_GROCERY_FIXED = """\
WITH grocery_orders AS (
    SELECT o.order_id,
           ol.quantity * ol.unit_price * (1 - ol.discount) AS line_revenue
    FROM order_lines ol
    JOIN products p ON p.product_id = ol.product_id
    JOIN orders o ON o.order_id = ol.order_id
    WHERE p.category = 'Grocery'
)
SELECT order_id, SUM(line_revenue) AS revenue
FROM grocery_orders
GROUP BY order_id
ORDER BY order_id"""

SQL_CATEGORY = """\
WITH category_profit AS (
    SELECT p.category,
           SUM(ol.quantity * ol.unit_price * (1 - ol.discount)) AS revenue
    FROM order_lines ol
    JOIN products p ON p.product_id = ol.product_id
    GROUP BY p.category
)
SELECT category, revenue
FROM category_profit
ORDER BY revenue DESC"""


def fence(sql: str) -> str:
    return f"```sql\n{sql}\n```"


QUESTION_LINES = {
    "Customer demographics": "\n".join(
        [
            Q_COUNTRY,
            Q_CITIES,
            # Token-identical to the first question: the repetition guard
            # must drop it.
            "How many customers are there in each country",
            Q_AGE,
        ]
    ),
    "Product profitability": "\n".join([Q_REVENUE, Q_GROCERY, Q_CATEGORY, "STOP"]),
}

SQL_BY_QUESTION = {
    Q_COUNTRY: fence(SQL_COUNTRY),
    Q_CITIES: fence(SQL_CITIES_BROKEN),
    Q_AGE: fence(SQL_AGE_BROKEN),
    Q_REVENUE: fence(SQL_REVENUE),
    Q_GROCERY: fence(SQL_GROCERY_2021),
    Q_CATEGORY: fence(SQL_CATEGORY),
}

REPAIR_BY_QUESTION = {
    Q_CITIES: fence(SQL_CITIES_FIXED),
    Q_AGE: fence(SQL_AGE_BROKEN),  # never learns; dropped after 5 rounds
    Q_GROCERY: fence(SQL_GROCERY_FIXED),
}

FILTER_BY_QUESTION = {
    Q_COUNTRY: "KEEP",
    Q_CITIES: "KEEP",
    Q_REVENUE: "KEEP",
    Q_GROCERY: "DROP: the question asks about 2021 but the results cover other years",
    Q_CATEGORY: "KEEP",
}

PARAPHRASES_BY_QUESTION = {
    Q_COUNTRY: "\n".join(
        [
            "Count the customers per country.",
            "For each country, how many customers are registered?",
        ]
    ),
    # First rewrite only differs in case: dropped by the paraphrase dedup.
    Q_CITIES: "\n".join(
        [
            "which cities have the most customers?",
            "Rank the cities by number of customers.",
        ]
    ),
    Q_REVENUE: "\n".join(
        [
            "Rank products by total revenue.",
            "Which items brought in the most revenue overall?",
        ]
    ),
    Q_CATEGORY: "\n".join(
        [
            "Show the revenue made in each product category.",
            "Break down total revenue by product category.",
        ]
    ),
}


class RuleBasedModel:
    """Deterministic stand-in model keyed on the rendered prompt text."""

    deterministic = True

    def send(self, request) -> ChatResponse:
        prompt = request.messages[-1].content
        first_line = prompt.splitlines()[0]
        if first_line.startswith("You are helping build an analytics question bank"):
            # Includes a case-insensitive duplicate of an existing theme.
            return ChatResponse("Customer Demographics\nProduct profitability")
        question = self._field(prompt, "Question")
        if first_line.startswith("You write analytics questions"):
            topic = self._field(prompt, "Topic")
            return ChatResponse(QUESTION_LINES[topic])
        if first_line.startswith("You translate analytics questions into SQL."):
            return ChatResponse(SQL_BY_QUESTION[question])
        if first_line.startswith("A SQL query needs fixing."):
            return ChatResponse(REPAIR_BY_QUESTION[question])
        if first_line.startswith("Judge whether a query result"):
            return ChatResponse(FILTER_BY_QUESTION[question])
        if first_line.startswith("Reword an analytics question"):
            return ChatResponse(PARAPHRASES_BY_QUESTION[question])
        raise AssertionError(f"unexpected prompt: {first_line!r}")

    @staticmethod
    def _field(prompt: str, label: str) -> str | None:
        match = re.search(rf"^{label}: (.*)$", prompt, re.MULTILINE)
        return match.group(1) if match else None


CONFIG_YAML = """\
# Toy pipeline configuration matching tests/data/cassette_toy.json.
pipeline:
  seed_topics: ["Customer demographics"]
  target_topic_count: 2
  max_questions_per_topic: 3
  max_heal_attempts: 5
  max_rewrites: 2
  split_ratio: 0.8
  rng_seed: 7
  dialects: [generic]
  model: gpt-4
  topic_concurrency: 1
compare:
  numeric_tolerance: 1.0e-6
  mode: column_multiset
executor:
  url: "sqlite::memory:"
  timeout: 60.0
llm:
  transport: replay
  concurrency: 4
paths:
  output_dir: out
  cassette: tests/data/cassette_toy.json
  fixture: base
"""


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    recorder = RecordingTransport(RuleBasedModel())
    client = ChatClient(recorder)
    fixture = RetailFixture.load("base")
    with QueryExecutor() as executor:
        executor.seed(fixture)
        schema = fixture.schema_descriptor(DialectTag.GENERIC)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = run_pipeline(TOY_CONFIG, schema, executor, client, tmp)

    stats = manifest.stats
    assert stats.topics_generated == 2, stats
    assert stats.questions_generated == 6, stats
    assert stats.dropped_unhealed == 1, stats
    assert stats.dropped_by_filter == 1, stats
    assert stats.unique_pairs == 4, stats
    assert stats.rewrites_generated == 7, stats
    assert stats.total_pairs == 11, stats

    recorder.cassette.save(DATA_DIR / "cassette_toy.json")
    (DATA_DIR / "config_toy.yaml").write_text(CONFIG_YAML)
    print(f"wrote {DATA_DIR / 'cassette_toy.json'} ({len(recorder.cassette.entries)} entries)")
    print(f"wrote {DATA_DIR / 'config_toy.yaml'}")


if __name__ == "__main__":
    main()
