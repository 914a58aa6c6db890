"""Write the shipped fixture corpus of validated templates.

Each record carries the template, its straight-line reference program, the
recorded answer, and the original question/answer texts in ``provenance`` so
the identity round trip can be checked byte for byte.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "dedcons" / "resources" / "templates.jsonl"


def entry(pid, question, steps, fact, expl, inputs, statements, answer, original_q, original_a, source):
    return {
        "problem_id": pid,
        "template": {
            "templatized_question": question,
            "templatized_answer": steps,
            "factual_assignment": fact,
            "node_explanation": expl,
            "question_vars": inputs,
        },
        "program": {
            "inputs": inputs,
            "statements": [{"out": o, "op": op, "args": a} for o, op, a in statements],
        },
        "answer": answer,
        "provenance": {"source": source, "original_question": original_q, "original_answer": original_a},
    }


def corpus() -> list[dict]:
    return [
        entry(
            "yasna-books",
            "Yasna has two books. One book is {pages_a} pages long, and the other book is {pages_b} pages long. "
            "If Yasna wants to finish both of the books in {weeks} weeks, how many pages will Yasna need to read "
            "every day, if she reads an equal number of pages each day?",
            [
                "Yasna has {pages_a} + {pages_b} = {total} pages to read.",
                "She has {weeks} * 7 = {days} days to read them.",
                "She needs to read {total} / {days} = {per_day} pages every day.",
            ],
            {"pages_a": 60, "pages_b": 12, "weeks": 6, "total": 72, "days": 42, "per_day": 1.71429},
            {
                "pages_a": "Length of the first book in pages",
                "pages_b": "Length of the second book in pages",
                "weeks": "Number of weeks Yasna has",
                "total": "The total number of pages Yasna has to read",
                "days": "The number of days Yasna has",
                "per_day": "The number of pages Yasna reads each day",
            },
            ["pages_a", "pages_b", "weeks"],
            [
                ("total", "add", ["pages_a", "pages_b"]),
                ("days", "multiply", ["weeks", 7]),
                ("per_day", "divide", ["total", "days"]),
            ],
            1.71429,
            "Yasna has two books. One book is 60 pages long, and the other book is 12 pages long. If Yasna wants "
            "to finish both of the books in 6 weeks, how many pages will Yasna need to read every day, if she "
            "reads an equal number of pages each day?",
            [
                "Yasna has 60 + 12 = 72 pages to read.",
                "She has 6 * 7 = 42 days to read them.",
                "She needs to read 72 / 42 = 1.71429 pages every day.",
            ],
            "gsm8k-style",
        ),
        entry(
            "train-speed",
            "A train travels {distance} kilometers in {time} hours. What is its average speed?",
            [
                "The train travels a distance of {distance} kilometers in {time} hours.",
                "Average speed is calculated as distance divided by time.",
                "Average speed = {distance} / {time} = {average_speed} kilometers per hour.",
            ],
            {"distance": 60, "time": 2, "average_speed": 30},
            {
                "distance": "The distance traveled by the train",
                "time": "The time taken by the train",
                "average_speed": "The average speed of the train",
            },
            ["distance", "time"],
            [("average_speed", "divide", ["distance", "time"])],
            30,
            "A train travels 60 kilometers in 2 hours. What is its average speed?",
            [
                "The train travels a distance of 60 kilometers in 2 hours.",
                "Average speed is calculated as distance divided by time.",
                "Average speed = 60 / 2 = 30 kilometers per hour.",
            ],
            "templatizer-example",
        ),
        entry(
            "mary-books",
            "Mary buys {quantity} books for ${cost_per_book} each. How much does she spend in total?",
            [
                "Mary buys {quantity} books, each costing {cost_per_book}.",
                "Total cost is calculated as number of books multiplied by the cost per book.",
                "Total cost = {quantity} * {cost_per_book} = ${total_cost}.",
            ],
            {"quantity": 3, "cost_per_book": 15, "total_cost": 45},
            {
                "quantity": "The number of books bought by Mary",
                "cost_per_book": "The cost of each book",
                "total_cost": "The total amount spent by Mary",
            },
            ["quantity", "cost_per_book"],
            [("total_cost", "multiply", ["quantity", "cost_per_book"])],
            45,
            "Mary buys 3 books for $15 each. How much does she spend in total?",
            [
                "Mary buys 3 books, each costing 15.",
                "Total cost is calculated as number of books multiplied by the cost per book.",
                "Total cost = 3 * 15 = $45.",
            ],
            "templatizer-example",
        ),
        entry(
            "hillary-crafts",
            "At a flea market, Hillary sells handmade crafts for {price_per_craft} dollars per craft. Today, "
            "Hillary sells {number_of_crafts} crafts and is given an extra {extra_dollars} dollars from an "
            "appreciative customer. Later on, Hillary deposits {deposit_amount} dollars from today's profits into "
            "her bank account. How many dollars is Hillary left with after making the deposit?",
            [
                "Hillary earns {price_per_craft} * {number_of_crafts} = {total_earnings} dollars from selling crafts.",
                "Adding the extra {extra_dollars} dollars, she has {total_earnings} + {extra_dollars} = {total_amount} dollars.",
                "After depositing {deposit_amount} dollars, she has {total_amount} - {deposit_amount} = {amount_left} dollars left.",
            ],
            {
                "price_per_craft": 15,
                "number_of_crafts": 6,
                "extra_dollars": 5,
                "deposit_amount": 12,
                "total_earnings": 90,
                "total_amount": 95,
                "amount_left": 83,
            },
            {
                "price_per_craft": "The price of each craft",
                "number_of_crafts": "The number of crafts sold",
                "extra_dollars": "The extra amount given by the customer",
                "deposit_amount": "The amount deposited into the bank account",
                "total_earnings": "The total amount earned from selling crafts",
                "total_amount": "The total amount after receiving the extra dollars",
                "amount_left": "The amount left after depositing",
            },
            ["price_per_craft", "number_of_crafts", "extra_dollars", "deposit_amount"],
            [
                ("total_earnings", "multiply", ["price_per_craft", "number_of_crafts"]),
                ("total_amount", "add", ["total_earnings", "extra_dollars"]),
                ("amount_left", "subtract", ["total_amount", "deposit_amount"]),
            ],
            83,
            "At a flea market, Hillary sells handmade crafts for 15 dollars per craft. Today, Hillary sells 6 "
            "crafts and is given an extra 5 dollars from an appreciative customer. Later on, Hillary deposits 12 "
            "dollars from today's profits into her bank account. How many dollars is Hillary left with after "
            "making the deposit?",
            [
                "Hillary earns 15 * 6 = 90 dollars from selling crafts.",
                "Adding the extra 5 dollars, she has 90 + 5 = 95 dollars.",
                "After depositing 12 dollars, she has 95 - 12 = 83 dollars left.",
            ],
            "extractor-example",
        ),
        entry(
            "hard-hats",
            "In a truck, there are {pink} pink hard hats, {green} green hard hats, and {yellow} yellow hard hats. "
            "Carl takes away {carl_pink} pink hard hats. John takes away {john_pink} pink hard hats and twice as "
            "many green hard hats as the number of pink hard hats he removed. Calculate the total number of hard "
            "hats that remained in the truck.",
            [
                "The total number of hats is {pink} + {green} + {yellow} = {total_initial}.",
                "Carl removes {carl_pink} pink hats, leaving {total_initial} - {carl_pink} = {total_after_carl}.",
                "John removes {john_pink} pink hats, leaving {total_after_carl} - {john_pink} = {total_after_john_pink}.",
                "John also removes {john_pink} * 2 = {john_green} green hats, leaving "
                "{total_after_john_pink} - {john_green} = {total_final} hats in total.",
            ],
            {
                "pink": 5,
                "green": 16,
                "yellow": 15,
                "carl_pink": 10,
                "john_pink": 7,
                "total_initial": 36,
                "total_after_carl": 26,
                "total_after_john_pink": 19,
                "john_green": 14,
                "total_final": 5,
            },
            {
                "pink": "The number of pink hard hats",
                "green": "The number of green hard hats",
                "yellow": "The number of yellow hard hats",
                "carl_pink": "The number of pink hard hats taken by Carl",
                "john_pink": "The number of pink hard hats taken by John",
                "total_initial": "The total number of hats initially",
                "total_after_carl": "The total number of hats after Carl's removal",
                "total_after_john_pink": "The total number of hats after John's pink hat removal",
                "john_green": "The number of green hats taken by John",
                "total_final": "The total number of hats remaining",
            },
            ["pink", "green", "yellow", "carl_pink", "john_pink"],
            [
                ("pink_green", "add", ["pink", "green"]),
                ("total_initial", "add", ["pink_green", "yellow"]),
                ("total_after_carl", "subtract", ["total_initial", "carl_pink"]),
                ("total_after_john_pink", "subtract", ["total_after_carl", "john_pink"]),
                ("john_green", "multiply", ["john_pink", 2]),
                ("total_final", "subtract", ["total_after_john_pink", "john_green"]),
            ],
            5,
            "In a truck, there are 5 pink hard hats, 16 green hard hats, and 15 yellow hard hats. Carl takes away "
            "10 pink hard hats. John takes away 7 pink hard hats and twice as many green hard hats as the number "
            "of pink hard hats he removed. Calculate the total number of hard hats that remained in the truck.",
            [
                "The total number of hats is 5 + 16 + 15 = 36.",
                "Carl removes 10 pink hats, leaving 36 - 10 = 26.",
                "John removes 7 pink hats, leaving 26 - 7 = 19.",
                "John also removes 7 * 2 = 14 green hats, leaving 19 - 14 = 5 hats in total.",
            ],
            "extractor-example",
        ),
        entry(
            "jacket-sale",
            "A jacket costs {price} dollars. The store takes {discount_rate} of the price off during a sale. "
            "How much does the jacket cost during the sale?",
            [
                "The discount is {price} * {discount_rate} = {discount} dollars.",
                "The sale price is {price} - {discount} = {sale_price} dollars.",
            ],
            {"price": 80, "discount_rate": 0.35, "discount": 28, "sale_price": 52},
            {
                "price": "The regular price of the jacket",
                "discount_rate": "The fraction of the price taken off",
                "discount": "The amount taken off the price",
                "sale_price": "The price of the jacket during the sale",
            },
            ["price", "discount_rate"],
            [("discount", "multiply", ["price", "discount_rate"]), ("sale_price", "subtract", ["price", "discount"])],
            52,
            "A jacket costs 80 dollars. The store takes 0.35 of the price off during a sale. How much does the "
            "jacket cost during the sale?",
            ["The discount is 80 * 0.35 = 28 dollars.", "The sale price is 80 - 28 = 52 dollars."],
            "artifact-fixture",
        ),
        entry(
            "apple-market",
            "Lena buys {weight} kilograms of apples at {price_per_kg} dollars per kilogram and pays with a {paid} "
            "dollar bill. How much change does she get?",
            [
                "The apples cost {weight} * {price_per_kg} = {cost} dollars.",
                "Her change is {paid} - {cost} = {change} dollars.",
            ],
            {"weight": 2.5, "price_per_kg": 4, "paid": 20, "cost": 10, "change": 10},
            {
                "weight": "The weight of the apples in kilograms",
                "price_per_kg": "The price of one kilogram of apples",
                "paid": "The value of the bill Lena pays with",
                "cost": "The cost of the apples",
                "change": "The change Lena receives",
            },
            ["weight", "price_per_kg", "paid"],
            [("cost", "multiply", ["weight", "price_per_kg"]), ("change", "subtract", ["paid", "cost"])],
            10,
            "Lena buys 2.5 kilograms of apples at 4 dollars per kilogram and pays with a 20 dollar bill. How much "
            "change does she get?",
            ["The apples cost 2.5 * 4 = 10 dollars.", "Her change is 20 - 10 = 10 dollars."],
            "artifact-fixture",
        ),
    ]


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args(argv)
    with open(args.output, "w", encoding="utf-8") as fh:
        for rec in corpus():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {len(corpus())} templates to {args.output}")


if __name__ == "__main__":
    main()
