import java.util.ArrayList;
import java.util.List;

public class Records {
    public static String render(List<String> rows) {
        String out = "";
        for (int i = 0; i < rows.size(); i++) {
            out = out + rows.get(i) + "\n";
        }
        return out;
    }

    public static List<Integer> evens(List<Integer> xs) {
        List<Integer> result = new ArrayList<Integer>();
        for (Integer x : xs) {
            if (x % 2 == 0) {
                result.add(x);
            }
        }
        return result;
    }
}
