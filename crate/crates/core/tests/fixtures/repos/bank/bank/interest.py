"""Interest calculations on integer cents."""


def simple_interest(principal, rate, years):
    if principal < 0 or rate < 0 or years < 0:
        raise ValueError("inputs must be non-negative")
    return round(principal * rate * years)


def compound(principal, rate, periods, per_year=12):
    if per_year <= 0:
        raise ValueError("per_year must be positive")
    amount = float(principal)
    step = rate / per_year
    for _ in range(periods):
        amount *= 1 + step
    return round(amount)


def schedule(principal, rate, payments):
    if payments <= 0:
        raise ValueError("payments must be positive")
    monthly = rate / 12
    if monthly == 0:
        payment = principal / payments
    else:
        payment = principal * monthly / (1 - (1 + monthly) ** -payments)
    rows = []
    remaining = float(principal)
    for number in range(1, payments + 1):
        interest = remaining * monthly
        reduction = payment - interest
        remaining = max(remaining - reduction, 0.0)
        rows.append((number, round(payment), round(interest), round(remaining)))
    return rows


def effective_rate(rate, per_year):
    return (1 + rate / per_year) ** per_year - 1


def doubling_time(rate):
    if rate <= 0:
        raise ValueError("rate must be positive")
    years = 0
    value = 1.0
    while value < 2.0:
        value *= 1 + rate
        years += 1
    return years
