#pragma once

// Built-in copies of data/lexicon/*.txt; a unit test keeps them in sync.

#include <string_view>

namespace d2af::lexicon_data {

inline constexpr std::string_view absolute_position = R"lex(
# Words that place the referent within the whole image.
left
right
middle
center
centre
top
bottom
front
back
upper
lower
leftmost
rightmost
topmost
bottommost
far left
far right
)lex";

inline constexpr std::string_view relative_position = R"lex(
# Phrases that place the referent relative to another object.
# Matched as whole token sequences; tokens covered here are not
# counted again as absolute positions.
near
near to
next to
beside
behind
above
below
under
underneath
beneath
between
on top of
in front of
left of
right of
close to
against
among
across from
inside
outside
around
over
along
)lex";

inline constexpr std::string_view relative_description = R"lex(
# Comparatives, superlatives and ordinals.
taller
tallest
shorter
shortest
bigger
biggest
smaller
smallest
larger
largest
closer
closest
nearer
nearest
farther
farthest
further
furthest
brighter
brightest
darker
darkest
higher
highest
longer
longest
older
oldest
younger
youngest
wider
widest
leftmost
rightmost
first
second
third
last
other
another
)lex";

inline constexpr std::string_view intrinsic = R"lex(
# Attributes of the referent itself: color, size, material, texture, clothing.
red
blue
green
yellow
black
white
gray
grey
brown
pink
purple
orange
golden
silver
dark
bright
small
large
big
tiny
tall
wide
short
long
little
huge
wooden
metal
plastic
glass
striped
spotted
plaid
shiny
dusty
old
new
round
square
soft
wearing
dressed
)lex";

inline constexpr std::string_view person_nouns = R"lex(
man
men
woman
women
person
people
boy
boys
girl
girls
child
children
kid
kids
guy
guys
lady
ladies
player
players
baby
gentleman
skier
surfer
skateboarder
batter
catcher
umpire
pitcher
rider
driver
mother
father
teen
adult
officer
chef
worker
)lex";

inline constexpr std::string_view stopwords = R"lex(
# Closed-class words and common modifiers never counted as nouns.
a
an
the
of
in
on
at
to
with
and
or
is
are
was
were
be
it
its
this
that
these
those
for
from
by
as
into
onto
up
down
off
out
very
some
one
two
three
four
five
alone
flat
sideways
hidden
forward
away
upright
partly
faded
torn
thin
his
her
their
he
she
they
there
here
)lex";

} // namespace d2af::lexicon_data
