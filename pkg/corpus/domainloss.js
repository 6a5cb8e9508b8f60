var table = {};
table.a = function fa() { return 1; };
table.b = function fb() { return 2; };
var q = 1 / 0;
var key = "a";
if (q < 2) { key = "b"; }
table[key]();
